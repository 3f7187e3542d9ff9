use std::path::Path;

use serde::{Deserialize, Serialize};

use super::wave::HierarchicalWave;
use crate::stats::nearest_rank_index;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissingAction {
    #[default]
    DropRow,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OutlierAction {
    #[default]
    None,
    /// Caps the response at its nearest-rank `percentile`.
    Winsorize { percentile: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CleanPolicy {
    #[serde(default)]
    pub missing: MissingAction,
    #[serde(default)]
    pub outliers: OutlierAction,
}

impl CleanPolicy {
    pub fn winsorize(percentile: f64) -> Self {
        CleanPolicy {
            missing: MissingAction::DropRow,
            outliers: OutlierAction::Winsorize { percentile },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let OutlierAction::Winsorize { percentile } = self.outliers {
            if !(percentile > 50.0 && percentile < 100.0) {
                return Err(Error::Config(format!(
                    "winsorize percentile {percentile} must lie in (50, 100)"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum CleanEntry {
    Dropped {
        table: &'static str,
        id: String,
        reason: String,
    },
    Winsorized {
        id: String,
        column: String,
        old: f64,
        new: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct CleanLog {
    pub entries: Vec<CleanEntry>,
}

impl CleanLog {
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn dropped_ids(&self, table: &str) -> Vec<&str> {
        self.entries
            .iter()
            .filter_map(|e| match e {
                CleanEntry::Dropped { table: t, id, .. } if *t == table => Some(id.as_str()),
                _ => None,
            })
            .collect()
    }

    /// Writes `table,id,action,column,old,new,reason` rows.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
        w.write_record(["table", "id", "action", "column", "old", "new", "reason"])
            .map_err(|e| Error::csv(path, e))?;
        for e in &self.entries {
            let rec: [String; 7] = match e {
                CleanEntry::Dropped { table, id, reason } => [
                    table.to_string(),
                    id.clone(),
                    "drop".into(),
                    String::new(),
                    String::new(),
                    String::new(),
                    reason.clone(),
                ],
                CleanEntry::Winsorized { id, column, old, new } => [
                    "persons".into(),
                    id.clone(),
                    "winsorize".into(),
                    column.clone(),
                    old.to_string(),
                    new.to_string(),
                    String::new(),
                ],
            };
            w.write_record(&rec).map_err(|e| Error::csv(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Drops persons with missing values, prunes empty households and zones,
/// and optionally winsorizes the response. Every change is logged.
pub fn clean(wave: &HierarchicalWave, policy: &CleanPolicy) -> Result<(HierarchicalWave, CleanLog)> {
    policy.validate()?;
    let mut log = CleanLog::default();

    let mut keep = Vec::with_capacity(wave.persons.len());
    for p in 0..wave.persons.len() {
        match wave.person_has_missing(p) {
            None => keep.push(p),
            Some(var) => log.entries.push(CleanEntry::Dropped {
                table: "persons",
                id: wave.persons.ids[p].clone(),
                reason: format!("missing {var}"),
            }),
        }
    }
    let (mut out, dropped_hh, dropped_zones) = wave.retain_persons(&keep);
    for id in dropped_hh {
        log.entries.push(CleanEntry::Dropped {
            table: "households",
            id,
            reason: "no persons retained".into(),
        });
    }
    for id in dropped_zones {
        log.entries.push(CleanEntry::Dropped {
            table: "zones",
            id,
            reason: "no households retained".into(),
        });
    }

    if let OutlierAction::Winsorize { percentile } = policy.outliers {
        if !out.response.is_empty() {
            let mut sorted: Vec<f64> = out.response.iter().map(|v| v.expect("cleaned")).collect();
            sorted.sort_by(f64::total_cmp);
            let cap = sorted[nearest_rank_index(sorted.len(), percentile)];
            for (p, slot) in out.response.iter_mut().enumerate() {
                let v = slot.expect("cleaned");
                if v > cap {
                    log.entries.push(CleanEntry::Winsorized {
                        id: out.persons.ids[p].clone(),
                        column: out.schema.response.clone(),
                        old: v,
                        new: cap,
                    });
                    *slot = Some(cap);
                }
            }
        }
    }
    Ok((out, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::schema::{Level, Schema, VariableSpec};
    use crate::dataset::wave::Column;
    use std::collections::BTreeMap;

    fn wave(ages: Vec<Option<f64>>, y: Vec<Option<f64>>) -> HierarchicalWave {
        let n = ages.len();
        let schema = Schema::new("VMT_Person", vec![VariableSpec::numeric("Age", Level::Person)]).unwrap();
        let mut pc = BTreeMap::new();
        pc.insert("Age".to_string(), Column::Numeric(ages));
        HierarchicalWave::from_parts(
            "w",
            schema,
            (0..n).map(|i| format!("P{i}")).collect(),
            (0..n).map(|i| format!("H{}", i / 2)).collect(),
            pc,
            y,
            (0..n.div_ceil(2)).map(|i| format!("H{i}")).collect(),
            (0..n.div_ceil(2)).map(|_| "Z1".to_string()).collect(),
            BTreeMap::new(),
            vec!["Z1".into()],
            BTreeMap::new(),
            None,
        )
        .unwrap()
    }

    #[test]
    fn no_op_on_clean_data() {
        let w = wave(vec![Some(1.0), Some(2.0)], vec![Some(3.0), Some(4.0)]);
        let (c, log) = clean(&w, &CleanPolicy::default()).unwrap();
        assert_eq!(c, w);
        assert!(log.is_empty());
    }

    #[test]
    fn missing_age_drops_that_person() {
        let w = wave(vec![Some(1.0), None, Some(5.0)], vec![Some(3.0), Some(4.0), Some(1.0)]);
        let (c, log) = clean(&w, &CleanPolicy::default()).unwrap();
        assert_eq!(c.persons.ids, vec!["P0", "P2"]);
        assert_eq!(log.dropped_ids("persons"), vec!["P1"]);
        // P2 was alone in H1 and survives; nothing else pruned
        assert!(log.dropped_ids("households").is_empty());
    }

    #[test]
    fn pruned_household_is_logged() {
        let w = wave(vec![Some(1.0), Some(1.0), None], vec![Some(3.0), Some(4.0), Some(1.0)]);
        let (c, log) = clean(&w, &CleanPolicy::default()).unwrap();
        assert_eq!(c.counts(), (2, 1, 1));
        assert_eq!(log.dropped_ids("households"), vec!["H1"]);
    }

    #[test]
    fn winsorize_caps_at_sorted_percentile() {
        let mut y: Vec<Option<f64>> = (1..=99).map(|v| Some(v as f64)).collect();
        y.push(Some(1000.0));
        let w = wave(vec![Some(1.0); 100], y.clone());
        let (c, log) = clean(&w, &CleanPolicy::winsorize(99.0)).unwrap();
        // brute-force nearest-rank: ceil(0.99 * 100) = 99th smallest
        let mut sorted: Vec<f64> = y.iter().map(|v| v.unwrap()).collect();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let oracle = sorted[98];
        assert_eq!(c.response[99], Some(oracle));
        assert_eq!(log.entries.len(), 1);
        assert!(matches!(log.entries[0], CleanEntry::Winsorized { old, new, .. } if old == 1000.0 && new == oracle));
    }

    #[test]
    fn percentile_outside_range_is_rejected() {
        let w = wave(vec![Some(1.0)], vec![Some(1.0)]);
        assert!(clean(&w, &CleanPolicy::winsorize(50.0)).is_err());
        assert!(clean(&w, &CleanPolicy::winsorize(100.0)).is_err());
    }

    #[test]
    fn clean_is_idempotent() {
        let ages = (0..40).map(|i| if i % 7 == 0 { None } else { Some(i as f64) }).collect();
        let y = (0..40).map(|i| if i % 11 == 0 { None } else { Some((i * i) as f64) }).collect();
        let w = wave(ages, y);
        let p = CleanPolicy::winsorize(90.0);
        let (once, _) = clean(&w, &p).unwrap();
        let (twice, log2) = clean(&once, &p).unwrap();
        assert_eq!(once, twice);
        assert!(log2.is_empty());
    }
}
