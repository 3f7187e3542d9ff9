use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use super::schema::{Level, Schema, VarKind, VariableSpec, HOUSEHOLD_ID, PERSON_ID, ZONE_ID};
use crate::{Error, Result};

/// One schema column of a table. `None` marks a missing cell.
#[derive(Debug, Clone, PartialEq)]
pub enum Column {
    Numeric(Vec<Option<f64>>),
    /// Category indices into the variable's `categories`.
    Categorical(Vec<Option<usize>>),
}

impl Column {
    fn len(&self) -> usize {
        match self {
            Column::Numeric(v) => v.len(),
            Column::Categorical(v) => v.len(),
        }
    }

    fn is_missing(&self, row: usize) -> bool {
        match self {
            Column::Numeric(v) => v[row].is_none(),
            Column::Categorical(v) => v[row].is_none(),
        }
    }

    fn select(&self, rows: &[usize]) -> Column {
        match self {
            Column::Numeric(v) => Column::Numeric(rows.iter().map(|&r| v[r]).collect()),
            Column::Categorical(v) => Column::Categorical(rows.iter().map(|&r| v[r]).collect()),
        }
    }
}

/// Rows keyed by unique string ids, with schema columns.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub ids: Vec<String>,
    pub columns: BTreeMap<String, Column>,
    index: HashMap<String, usize>,
}

impl Table {
    fn new(name: &str, ids: Vec<String>, columns: BTreeMap<String, Column>) -> Result<Self> {
        let mut index = HashMap::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if index.insert(id.clone(), i).is_some() {
                return Err(Error::DuplicateId {
                    table: name.to_string(),
                    id: id.clone(),
                });
            }
        }
        debug_assert!(columns.values().all(|c| c.len() == ids.len()));
        Ok(Table {
            ids,
            columns,
            index,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn row_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    fn select(&self, rows: &[usize]) -> Table {
        let ids: Vec<String> = rows.iter().map(|&r| self.ids[r].clone()).collect();
        let columns = self
            .columns
            .iter()
            .map(|(k, c)| (k.clone(), c.select(rows)))
            .collect();
        // ids stay unique under selection
        Table::new("", ids, columns).expect("subset of unique ids")
    }
}

/// Raw zone counts used for the entropy diversity index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZoneCounts {
    pub households: f64,
    pub basic: f64,
    pub retail: f64,
    pub service: f64,
}

pub const ZONE_COUNT_COLUMNS: [&str; 4] = ["n_households", "basic_emp", "retail_emp", "service_emp"];

/// One survey wave: persons nested in households nested in zones.
#[derive(Debug, Clone, PartialEq)]
pub struct HierarchicalWave {
    pub label: String,
    pub schema: Schema,
    pub persons: Table,
    /// Household row of each person.
    pub person_household: Vec<usize>,
    pub households: Table,
    /// Zone row of each household.
    pub household_zone: Vec<usize>,
    pub zones: Table,
    pub zone_counts: Option<Vec<ZoneCounts>>,
    /// Per-person response (miles); `None` when missing.
    pub response: Vec<Option<f64>>,
}

impl HierarchicalWave {
    /// (persons, households, zones)
    pub fn counts(&self) -> (usize, usize, usize) {
        (self.persons.len(), self.households.len(), self.zones.len())
    }

    fn table(&self, level: Level) -> &Table {
        match level {
            Level::Person => &self.persons,
            Level::Household => &self.households,
            Level::Zone => &self.zones,
        }
    }

    pub(crate) fn table_mut(&mut self, level: Level) -> &mut Table {
        match level {
            Level::Person => &mut self.persons,
            Level::Household => &mut self.households,
            Level::Zone => &mut self.zones,
        }
    }

    /// Row in the variable's own table for a given person row.
    pub fn source_row(&self, level: Level, person: usize) -> usize {
        match level {
            Level::Person => person,
            Level::Household => self.person_household[person],
            Level::Zone => self.household_zone[self.person_household[person]],
        }
    }

    pub fn zone_of_person(&self, person: usize) -> usize {
        self.household_zone[self.person_household[person]]
    }

    fn column(&self, var: &str) -> Result<(&VariableSpec, &Column)> {
        let spec = self
            .schema
            .get(var)
            .ok_or_else(|| Error::invalid(format!("unknown variable `{var}`")))?;
        let col = self
            .table(spec.level)
            .columns
            .get(var)
            .ok_or_else(|| Error::invalid(format!("variable `{var}` has no data")))?;
        Ok((spec, col))
    }

    /// Numeric variable resolved to one value per person.
    pub fn person_numeric(&self, var: &str) -> Result<Vec<Option<f64>>> {
        let (spec, col) = self.column(var)?;
        match col {
            Column::Numeric(v) => Ok((0..self.persons.len())
                .map(|p| v[self.source_row(spec.level, p)])
                .collect()),
            Column::Categorical(_) => Err(Error::invalid(format!("`{var}` is categorical"))),
        }
    }

    /// Categorical variable resolved to one category index per person.
    pub fn person_categorical(&self, var: &str) -> Result<Vec<Option<usize>>> {
        let (spec, col) = self.column(var)?;
        match col {
            Column::Categorical(v) => Ok((0..self.persons.len())
                .map(|p| v[self.source_row(spec.level, p)])
                .collect()),
            Column::Numeric(_) => Err(Error::invalid(format!("`{var}` is numeric"))),
        }
    }

    /// Whether any schema variable or the response is missing for a person.
    pub fn person_has_missing(&self, person: usize) -> Option<String> {
        if self.response[person].is_none() {
            return Some(self.schema.response.clone());
        }
        for v in &self.schema.variables {
            let row = self.source_row(v.level, person);
            match self.table(v.level).columns.get(&v.name) {
                Some(col) if !col.is_missing(row) => {}
                _ => return Some(v.name.clone()),
            }
        }
        None
    }

    /// Sets (or replaces) a numeric column at the given level.
    pub fn set_numeric(&mut self, level: Level, name: &str, values: Vec<Option<f64>>) -> Result<()> {
        let table = self.table_mut(level);
        if values.len() != table.len() {
            return Err(Error::DimensionMismatch {
                expected: table.len(),
                got: values.len(),
            });
        }
        table.columns.insert(name.to_string(), Column::Numeric(values));
        Ok(())
    }

    /// Keeps the given person rows, then prunes households and zones left
    /// without persons. Returns the ids of pruned households and zones.
    pub fn retain_persons(&self, keep: &[usize]) -> (HierarchicalWave, Vec<String>, Vec<String>) {
        let mut hh_used = vec![false; self.households.len()];
        for &p in keep {
            hh_used[self.person_household[p]] = true;
        }
        let hh_keep: Vec<usize> = (0..self.households.len()).filter(|&h| hh_used[h]).collect();
        let mut zone_used = vec![false; self.zones.len()];
        for &h in &hh_keep {
            zone_used[self.household_zone[h]] = true;
        }
        let zone_keep: Vec<usize> = (0..self.zones.len()).filter(|&z| zone_used[z]).collect();

        let mut hh_map = vec![usize::MAX; self.households.len()];
        for (new, &old) in hh_keep.iter().enumerate() {
            hh_map[old] = new;
        }
        let mut zone_map = vec![usize::MAX; self.zones.len()];
        for (new, &old) in zone_keep.iter().enumerate() {
            zone_map[old] = new;
        }
        let dropped_hh = (0..self.households.len())
            .filter(|&h| !hh_used[h])
            .map(|h| self.households.ids[h].clone())
            .collect();
        let dropped_zones = (0..self.zones.len())
            .filter(|&z| !zone_used[z])
            .map(|z| self.zones.ids[z].clone())
            .collect();

        let wave = HierarchicalWave {
            label: self.label.clone(),
            schema: self.schema.clone(),
            persons: self.persons.select(keep),
            person_household: keep.iter().map(|&p| hh_map[self.person_household[p]]).collect(),
            households: self.households.select(&hh_keep),
            household_zone: hh_keep.iter().map(|&h| zone_map[self.household_zone[h]]).collect(),
            zones: self.zones.select(&zone_keep),
            zone_counts: self
                .zone_counts
                .as_ref()
                .map(|c| zone_keep.iter().map(|&z| c[z]).collect()),
            response: keep.iter().map(|&p| self.response[p]).collect(),
        };
        (wave, dropped_hh, dropped_zones)
    }

    /// Builds a wave from in-memory tables, checking every invariant.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        label: &str,
        schema: Schema,
        person_ids: Vec<String>,
        person_hh_ids: Vec<String>,
        person_columns: BTreeMap<String, Column>,
        response: Vec<Option<f64>>,
        household_ids: Vec<String>,
        household_zone_ids: Vec<String>,
        household_columns: BTreeMap<String, Column>,
        zone_ids: Vec<String>,
        zone_columns: BTreeMap<String, Column>,
        zone_counts: Option<Vec<ZoneCounts>>,
    ) -> Result<Self> {
        schema.validate()?;
        let zones = Table::new("zones", zone_ids, zone_columns)?;
        let households = Table::new("households", household_ids, household_columns)?;
        let persons = Table::new("persons", person_ids, person_columns)?;
        let household_zone = households
            .ids
            .iter()
            .zip(&household_zone_ids)
            .map(|(hid, zid)| {
                zones.row_of(zid).ok_or_else(|| Error::DanglingReference {
                    table: "households".into(),
                    id: hid.clone(),
                    target: "zone_id".into(),
                    key: zid.clone(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let person_household = persons
            .ids
            .iter()
            .zip(&person_hh_ids)
            .map(|(pid, hid)| {
                households.row_of(hid).ok_or_else(|| Error::DanglingReference {
                    table: "persons".into(),
                    id: pid.clone(),
                    target: "household_id".into(),
                    key: hid.clone(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        for (pid, r) in persons.ids.iter().zip(&response) {
            if let Some(v) = r {
                if !v.is_finite() || *v < 0.0 {
                    return Err(Error::InvalidValue {
                        context: format!("persons `{pid}` response"),
                        detail: format!("{v} is not a finite non-negative number"),
                    });
                }
            }
        }
        Ok(HierarchicalWave {
            label: label.to_string(),
            schema,
            persons,
            person_household,
            households,
            household_zone,
            zones,
            zone_counts,
            response,
        })
    }
}

fn is_missing_token(s: &str) -> bool {
    matches!(s.trim(), "" | "NA" | "na" | "NaN" | "nan" | "." | "null")
}

fn parse_numeric(raw: &str, context: impl Fn() -> String) -> Result<Option<f64>> {
    if is_missing_token(raw) {
        return Ok(None);
    }
    let v: f64 = raw.trim().parse().map_err(|_| Error::InvalidValue {
        context: context(),
        detail: format!("`{raw}` is not a number"),
    })?;
    if !v.is_finite() {
        return Err(Error::InvalidValue {
            context: context(),
            detail: format!("`{raw}` is not finite"),
        });
    }
    Ok(Some(v))
}

struct RawTable {
    headers: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl RawTable {
    fn read(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::io(
                path,
                std::io::Error::new(std::io::ErrorKind::NotFound, "file not found"),
            ));
        }
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_path(path)
            .map_err(|e| Error::csv(path, e))?;
        let headers = rdr
            .headers()
            .map_err(|e| Error::csv(path, e))?
            .iter()
            .map(|h| h.trim().to_string())
            .collect();
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| Error::csv(path, e))?;
            rows.push(rec.iter().map(str::to_string).collect());
        }
        Ok(RawTable { headers, rows })
    }

    fn col(&self, table: &str, name: &str) -> Result<usize> {
        self.headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn {
                table: table.to_string(),
                column: name.to_string(),
            })
    }

    fn strings(&self, idx: usize) -> Vec<String> {
        self.rows.iter().map(|r| r[idx].trim().to_string()).collect()
    }

    fn schema_columns<'a>(
        &self,
        table: &str,
        id_col: usize,
        vars: impl Iterator<Item = &'a VariableSpec>,
        optional: &BTreeSet<String>,
    ) -> Result<BTreeMap<String, Column>> {
        let mut out = BTreeMap::new();
        for v in vars {
            let c = match self.col(table, &v.name) {
                Ok(c) => c,
                Err(_) if optional.contains(&v.name) => {
                    let n = self.rows.len();
                    let col = match v.kind {
                        VarKind::Numeric => Column::Numeric(vec![None; n]),
                        VarKind::Categorical => Column::Categorical(vec![None; n]),
                    };
                    out.insert(v.name.clone(), col);
                    continue;
                }
                Err(e) => return Err(e),
            };
            let col = match v.kind {
                VarKind::Numeric => Column::Numeric(
                    self.rows
                        .iter()
                        .map(|r| parse_numeric(&r[c], || format!("{table} `{}` {}", r[id_col], v.name)))
                        .collect::<Result<_>>()?,
                ),
                VarKind::Categorical => Column::Categorical(
                    self.rows
                        .iter()
                        .map(|r| {
                            let raw = r[c].trim();
                            if is_missing_token(raw) {
                                return Ok(None);
                            }
                            v.category_index(raw).map(Some).ok_or_else(|| Error::InvalidValue {
                                context: format!("{table} `{}` {}", r[id_col], v.name),
                                detail: format!("unknown category `{raw}`"),
                            })
                        })
                        .collect::<Result<_>>()?,
                ),
            };
            out.insert(v.name.clone(), col);
        }
        Ok(out)
    }
}

/// Loads a wave from its person, household and zone CSV files.
pub fn load_wave(
    label: &str,
    person_csv: &Path,
    household_csv: &Path,
    zone_csv: &Path,
    schema: &Schema,
) -> Result<HierarchicalWave> {
    load_wave_with_derived(label, person_csv, household_csv, zone_csv, schema, &BTreeSet::new())
}

/// Like [`load_wave`], but the variables (or response) named in `derived`
/// may be absent from the files; absent columns load as all-missing, to be
/// filled in by the derive stage.
pub fn load_wave_with_derived(
    label: &str,
    person_csv: &Path,
    household_csv: &Path,
    zone_csv: &Path,
    schema: &Schema,
    derived: &BTreeSet<String>,
) -> Result<HierarchicalWave> {
    schema.validate()?;
    let zt = RawTable::read(zone_csv)?;
    let ht = RawTable::read(household_csv)?;
    let pt = RawTable::read(person_csv)?;

    let z_id = zt.col("zones", ZONE_ID)?;
    let zone_columns = zt.schema_columns("zones", z_id, schema.at_level(Level::Zone), derived)?;
    let zone_counts = if ZONE_COUNT_COLUMNS.iter().all(|c| zt.headers.iter().any(|h| h == c)) {
        let idx: Vec<usize> = ZONE_COUNT_COLUMNS
            .iter()
            .map(|c| zt.col("zones", c))
            .collect::<Result<_>>()?;
        let mut counts = Vec::with_capacity(zt.rows.len());
        for r in &zt.rows {
            let mut vals = [0.0; 4];
            for (k, &i) in idx.iter().enumerate() {
                vals[k] = parse_numeric(&r[i], || format!("zones `{}` {}", r[z_id], ZONE_COUNT_COLUMNS[k]))?
                    .ok_or_else(|| Error::InvalidValue {
                        context: format!("zones `{}`", r[z_id]),
                        detail: format!("missing {}", ZONE_COUNT_COLUMNS[k]),
                    })?;
            }
            counts.push(ZoneCounts {
                households: vals[0],
                basic: vals[1],
                retail: vals[2],
                service: vals[3],
            });
        }
        Some(counts)
    } else {
        None
    };

    let h_id = ht.col("households", HOUSEHOLD_ID)?;
    let h_zone = ht.col("households", ZONE_ID)?;
    let household_columns = ht.schema_columns("households", h_id, schema.at_level(Level::Household), derived)?;

    let p_id = pt.col("persons", PERSON_ID)?;
    let p_hh = pt.col("persons", HOUSEHOLD_ID)?;
    let p_y = match pt.col("persons", &schema.response) {
        Ok(c) => Some(c),
        Err(_) if derived.contains(&schema.response) => None,
        Err(e) => return Err(e),
    };
    let person_columns = pt.schema_columns("persons", p_id, schema.at_level(Level::Person), derived)?;
    let response = match p_y {
        Some(p_y) => pt
            .rows
            .iter()
            .map(|r| parse_numeric(&r[p_y], || format!("persons `{}` {}", r[p_id], schema.response)))
            .collect::<Result<Vec<_>>>()?,
        None => vec![None; pt.rows.len()],
    };

    let wave = HierarchicalWave::from_parts(
        label,
        schema.clone(),
        pt.strings(p_id),
        pt.strings(p_hh),
        person_columns,
        response,
        ht.strings(h_id),
        ht.strings(h_zone),
        household_columns,
        zt.strings(z_id),
        zone_columns,
        zone_counts,
    )?;
    let (np, nh, nz) = wave.counts();
    log::info!("wave {label}: loaded {np} persons, {nh} households, {nz} zones");
    Ok(wave)
}

fn fmt_cell(spec: &VariableSpec, col: &Column, row: usize) -> String {
    match col {
        Column::Numeric(v) => v[row].map(|x| x.to_string()).unwrap_or_default(),
        Column::Categorical(v) => v[row].map(|c| spec.categories[c].clone()).unwrap_or_default(),
    }
}

/// Writes the wave as `persons.csv`, `households.csv` and `zones.csv`
/// into `dir`, in the layout read by [`load_wave`].
pub fn write_wave(wave: &HierarchicalWave, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let write = |name: &str, header: Vec<String>, rows: Vec<Vec<String>>| -> Result<()> {
        let path = dir.join(name);
        let mut w = csv::Writer::from_path(&path).map_err(|e| Error::csv(&path, e))?;
        w.write_record(&header).map_err(|e| Error::csv(&path, e))?;
        for r in rows {
            w.write_record(&r).map_err(|e| Error::csv(&path, e))?;
        }
        w.flush().map_err(|e| Error::io(&path, e))
    };
    let vars = |level: Level| -> Vec<&VariableSpec> { wave.schema.at_level(level).collect() };

    let zv = vars(Level::Zone);
    let mut header = vec![ZONE_ID.to_string()];
    header.extend(zv.iter().map(|v| v.name.clone()));
    if wave.zone_counts.is_some() {
        header.extend(ZONE_COUNT_COLUMNS.iter().map(|c| c.to_string()));
    }
    let rows = (0..wave.zones.len())
        .map(|z| {
            let mut r = vec![wave.zones.ids[z].clone()];
            r.extend(zv.iter().map(|v| fmt_cell(v, &wave.zones.columns[&v.name], z)));
            if let Some(c) = &wave.zone_counts {
                let c = c[z];
                r.extend([c.households, c.basic, c.retail, c.service].iter().map(|x| x.to_string()));
            }
            r
        })
        .collect();
    write("zones.csv", header, rows)?;

    let hv = vars(Level::Household);
    let mut header = vec![HOUSEHOLD_ID.to_string(), ZONE_ID.to_string()];
    header.extend(hv.iter().map(|v| v.name.clone()));
    let rows = (0..wave.households.len())
        .map(|h| {
            let mut r = vec![
                wave.households.ids[h].clone(),
                wave.zones.ids[wave.household_zone[h]].clone(),
            ];
            r.extend(hv.iter().map(|v| fmt_cell(v, &wave.households.columns[&v.name], h)));
            r
        })
        .collect();
    write("households.csv", header, rows)?;

    let pv = vars(Level::Person);
    let mut header = vec![PERSON_ID.to_string(), HOUSEHOLD_ID.to_string()];
    header.extend(pv.iter().map(|v| v.name.clone()));
    header.push(wave.schema.response.clone());
    let rows = (0..wave.persons.len())
        .map(|p| {
            let mut r = vec![
                wave.persons.ids[p].clone(),
                wave.households.ids[wave.person_household[p]].clone(),
            ];
            r.extend(pv.iter().map(|v| fmt_cell(v, &wave.persons.columns[&v.name], p)));
            r.push(wave.response[p].map(|x| x.to_string()).unwrap_or_default());
            r
        })
        .collect();
    write("persons.csv", header, rows)
}
