use std::collections::{BTreeMap, HashMap};
use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::schema::VarKind;
use super::vif::{compute_vif, VifRow};
use super::wave::HierarchicalWave;
use crate::interpret::{spline_basis, KnotSet};
use crate::{Error, Result};

pub const INTERCEPT: &str = "Intercept";

/// A model term: one schema variable, optionally expanded into linear-spline
/// segments at its knots.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TermSpec {
    pub variable: String,
    #[serde(default)]
    pub piecewise: bool,
}

impl TermSpec {
    pub fn linear(variable: &str) -> Self {
        TermSpec {
            variable: variable.to_string(),
            piecewise: false,
        }
    }

    pub fn piecewise(variable: &str) -> Self {
        TermSpec {
            variable: variable.to_string(),
            piecewise: true,
        }
    }
}

/// Columns a term occupies in a design matrix.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DesignTerm {
    pub variable: String,
    pub columns: Range<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    /// Column names; column 0 is always the intercept.
    pub columns: Vec<String>,
    pub terms: Vec<DesignTerm>,
    /// Row-major `n_rows x columns.len()`.
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub hh_index: Vec<usize>,
    pub zone_index: Vec<usize>,
    pub n_households: usize,
    pub n_zones: usize,
    pub person_ids: Vec<String>,
    /// Sample mean of each numeric term variable in raw units.
    pub raw_means: BTreeMap<String, f64>,
    pub warnings: Vec<String>,
}

impl DesignMatrix {
    pub fn n_rows(&self) -> usize {
        self.y.len()
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let p = self.n_cols();
        &self.x[i * p..(i + 1) * p]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.n_rows()).map(|i| self.x[i * self.n_cols() + j]).collect()
    }

    /// Builds a design directly from arrays. Group ids may be arbitrary
    /// labels; they are re-indexed densely in order of first appearance.
    pub fn from_arrays(
        columns: Vec<String>,
        x: Vec<f64>,
        y: Vec<f64>,
        hh_groups: &[usize],
        zone_groups: &[usize],
    ) -> Result<Self> {
        let n = y.len();
        let p = columns.len();
        if x.len() != n * p {
            return Err(Error::DimensionMismatch {
                expected: n * p,
                got: x.len(),
            });
        }
        if hh_groups.len() != n || zone_groups.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: hh_groups.len().min(zone_groups.len()),
            });
        }
        let (hh_index, n_households) = densify(hh_groups);
        let (zone_index, n_zones) = densify(zone_groups);
        let terms = columns
            .iter()
            .enumerate()
            .map(|(j, c)| DesignTerm {
                variable: c.clone(),
                columns: j..j + 1,
            })
            .collect();
        let d = DesignMatrix {
            columns,
            terms,
            x,
            y,
            hh_index,
            zone_index,
            n_households,
            n_zones,
            person_ids: (0..n).map(|i| i.to_string()).collect(),
            raw_means: BTreeMap::new(),
            warnings: Vec::new(),
        };
        d.check_nesting()?;
        Ok(d)
    }

    /// Every household group must sit in exactly one zone group.
    pub fn check_nesting(&self) -> Result<()> {
        let mut zone_of = vec![usize::MAX; self.n_households];
        for (h, z) in self.hh_index.iter().zip(&self.zone_index) {
            if zone_of[*h] == usize::MAX {
                zone_of[*h] = *z;
            } else if zone_of[*h] != *z {
                return Err(Error::NotNested { household: *h });
            }
        }
        Ok(())
    }

    /// Keeps the listed terms (by variable name) plus the intercept.
    pub fn select_terms(&self, keep: &[String]) -> DesignMatrix {
        let mut cols = vec![0usize];
        let mut terms = vec![self.terms[0].clone()];
        for t in self.terms.iter().skip(1) {
            if keep.contains(&t.variable) {
                let start = cols.len();
                cols.extend(t.columns.clone());
                terms.push(DesignTerm {
                    variable: t.variable.clone(),
                    columns: start..cols.len(),
                });
            }
        }
        let p = self.n_cols();
        let x = (0..self.n_rows())
            .flat_map(|i| cols.iter().map(move |&j| (i, j)))
            .map(|(i, j)| self.x[i * p + j])
            .collect();
        DesignMatrix {
            columns: cols.iter().map(|&j| self.columns[j].clone()).collect(),
            terms,
            x,
            ..self.clone()
        }
    }

    /// VIF of every non-intercept column.
    pub fn vif(&self) -> Result<Vec<VifRow>> {
        let p = self.n_cols();
        let names: Vec<String> = self.columns[1..].to_vec();
        let x: Vec<f64> = (0..self.n_rows())
            .flat_map(|i| self.x[i * p + 1..(i + 1) * p].iter().copied())
            .collect();
        compute_vif(&names, &x, self.n_rows())
    }
}

fn densify(labels: &[usize]) -> (Vec<usize>, usize) {
    let mut map = HashMap::new();
    let idx = labels
        .iter()
        .map(|l| {
            let next = map.len();
            *map.entry(*l).or_insert(next)
        })
        .collect();
    (idx, map.len())
}

fn fmt_num(v: f64) -> String {
    format!("{v}")
}

/// Table-style labels for the segments of a piecewise term:
/// `[0-5]`, `[5-15]`, `[>15]`.
pub fn segment_labels(knots: &[f64]) -> Vec<String> {
    let mut out = Vec::with_capacity(knots.len() + 1);
    let mut lo = 0.0;
    for &k in knots {
        out.push(format!("[{}-{}]", fmt_num(lo), fmt_num(k)));
        lo = k;
    }
    out.push(format!("[>{}]", fmt_num(lo)));
    out
}

/// Builds the design matrix of a cleaned wave: intercept, reference-coded
/// dummies for categorical terms, raw or linear-spline columns for numeric
/// terms. Constant non-intercept columns are dropped with a warning.
pub fn build_design(wave: &HierarchicalWave, terms: &[TermSpec], knots: &KnotSet) -> Result<DesignMatrix> {
    let n = wave.persons.len();
    let y: Vec<f64> = wave
        .response
        .iter()
        .enumerate()
        .map(|(p, v)| v.ok_or_else(|| Error::invalid(format!("person `{}` has a missing response; clean first", wave.persons.ids[p]))))
        .collect::<Result<_>>()?;

    let mut names = vec![INTERCEPT.to_string()];
    let mut cols: Vec<Vec<f64>> = vec![vec![1.0; n]];
    let mut design_terms = vec![DesignTerm {
        variable: INTERCEPT.to_string(),
        columns: 0..1,
    }];
    let mut warnings = Vec::new();
    let mut raw_means = BTreeMap::new();

    for term in terms {
        let spec = wave
            .schema
            .get(&term.variable)
            .ok_or_else(|| Error::invalid(format!("unknown variable `{}`", term.variable)))?;
        let mut tcols: Vec<(String, Vec<f64>)> = Vec::new();
        match spec.kind {
            VarKind::Categorical => {
                let vals = wave.person_categorical(&spec.name)?;
                let reference = spec.reference_index().expect("validated schema");
                for (c, label) in spec.categories.iter().enumerate() {
                    if c == reference {
                        continue;
                    }
                    let col = vals
                        .iter()
                        .map(|v| match v {
                            Some(k) => Ok(if *k == c { 1.0 } else { 0.0 }),
                            None => Err(missing(&spec.name)),
                        })
                        .collect::<Result<Vec<f64>>>()?;
                    tcols.push((format!("{} [{}]", spec.name, label), col));
                }
            }
            VarKind::Numeric => {
                let vals = wave
                    .person_numeric(&spec.name)?
                    .into_iter()
                    .map(|v| v.ok_or_else(|| missing(&spec.name)))
                    .collect::<Result<Vec<f64>>>()?;
                raw_means.insert(spec.name.clone(), crate::stats::mean(&vals));
                let ks = knots.get(&spec.name);
                if term.piecewise && !ks.is_empty() {
                    let (lo, hi) = vals
                        .iter()
                        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
                    for &k in ks {
                        if k <= lo || k >= hi {
                            let msg = format!("{}: knot {k} outside observed range [{lo}, {hi}]", spec.name);
                            log::warn!("{msg}");
                            warnings.push(msg);
                        }
                    }
                    let labels = segment_labels(ks);
                    let mut seg: Vec<Vec<f64>> = vec![Vec::with_capacity(n); ks.len() + 1];
                    for &v in &vals {
                        for (s, b) in spline_basis(v, ks).into_iter().enumerate() {
                            seg[s].push(b);
                        }
                    }
                    for (label, col) in labels.into_iter().zip(seg) {
                        tcols.push((format!("{} {}", spec.name, label), col));
                    }
                } else {
                    tcols.push((spec.name.clone(), vals));
                }
            }
        }
        let start = cols.len();
        for (name, col) in tcols {
            let first = col.first().copied().unwrap_or(0.0);
            if col.iter().all(|&v| v == first) {
                let msg = format!("column `{name}` is constant and was dropped");
                log::warn!("{msg}");
                warnings.push(msg);
                continue;
            }
            names.push(name);
            cols.push(col);
        }
        if cols.len() > start {
            design_terms.push(DesignTerm {
                variable: spec.name.clone(),
                columns: start..cols.len(),
            });
        } else {
            warnings.push(format!("term `{}` has no usable columns", spec.name));
        }
    }

    let p = cols.len();
    let mut x = Vec::with_capacity(n * p);
    for i in 0..n {
        for c in &cols {
            x.push(c[i]);
        }
    }
    let hh_groups: Vec<usize> = wave.person_household.clone();
    let zone_groups: Vec<usize> = (0..n).map(|i| wave.zone_of_person(i)).collect();
    let (hh_index, n_households) = densify(&hh_groups);
    let (zone_index, n_zones) = densify(&zone_groups);
    let d = DesignMatrix {
        columns: names,
        terms: design_terms,
        x,
        y,
        hh_index,
        zone_index,
        n_households,
        n_zones,
        person_ids: wave.persons.ids.clone(),
        raw_means,
        warnings,
    };
    d.check_nesting()?;
    Ok(d)
}

fn missing(var: &str) -> Error {
    Error::invalid(format!("missing value in `{var}`; clean the wave first"))
}
