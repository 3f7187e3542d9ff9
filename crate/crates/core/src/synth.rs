//! Synthetic hierarchical waves with known piecewise fixed effects and
//! variance components.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StudentT};
use serde::{Deserialize, Serialize};

use crate::dataset::{
    segment_labels, write_wave, Column, HierarchicalWave, Level, Schema, VariableGroup, VariableSpec,
    INTERCEPT,
};
use crate::interpret::spline_basis;
use crate::{Error, Result};

/// A group size: fixed, or drawn uniformly from an inclusive range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Count {
    Fixed(usize),
    Range { min: usize, max: usize },
}

impl Count {
    fn draw(&self, rng: &mut ChaCha8Rng) -> usize {
        match *self {
            Count::Fixed(n) => n,
            Count::Range { min, max } => rng.random_range(min..=max),
        }
    }

    fn validate(&self, what: &str) -> Result<()> {
        match *self {
            Count::Fixed(0) => Err(Error::invalid(format!("{what} must be at least 1"))),
            Count::Range { min, max } if min == 0 || min > max => {
                Err(Error::invalid(format!("{what} range must satisfy 1 <= min <= max")))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Layout {
    /// Zones, households per zone and persons per household drawn per group.
    Nested {
        n_zones: usize,
        households_per_zone: Count,
        persons_per_household: Count,
    },
    /// Exact totals; every zone gets at least one household and every
    /// household at least one person, the rest are allocated uniformly.
    Totals {
        zones: usize,
        households: usize,
        persons: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Covariate {
    Uniform {
        low: f64,
        high: f64,
    },
    Normal {
        mean: f64,
        sd: f64,
        /// Draws are clamped into `[min, max]` when given.
        #[serde(default)]
        min: Option<f64>,
        #[serde(default)]
        max: Option<f64>,
        /// Correlates the standardized draw with an earlier normal variable
        /// at the same level.
        #[serde(default)]
        correlate_with: Option<String>,
        #[serde(default)]
        rho: f64,
    },
    Categorical {
        categories: Vec<String>,
        probabilities: Vec<f64>,
        reference: String,
    },
}

/// Contribution of a variable to the response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Effect {
    #[default]
    None,
    /// Slopes per linear-spline segment (`knots.len() + 1` of them).
    Piecewise { knots: Vec<f64>, slopes: Vec<f64> },
    /// Shift relative to the reference category, per category label.
    Categorical { shifts: BTreeMap<String, f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthVariable {
    pub name: String,
    pub level: Level,
    #[serde(default)]
    pub group: Option<VariableGroup>,
    #[serde(default)]
    pub units: String,
    pub covariate: Covariate,
    #[serde(default)]
    pub effect: Effect,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ResidualShape {
    #[default]
    Gaussian,
    /// Student-t with `df > 2`, rescaled to the residual SD.
    StudentT { df: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    #[serde(default = "default_label")]
    pub label: String,
    #[serde(default = "default_response")]
    pub response: String,
    pub layout: Layout,
    pub sd_zone: f64,
    pub sd_hh: f64,
    pub sd_resid: f64,
    #[serde(default)]
    pub intercept: f64,
    pub variables: Vec<SynthVariable>,
    #[serde(default)]
    pub residual: ResidualShape,
    /// Floors the response at 0 (off by default, keeping the linear model
    /// exact).
    #[serde(default)]
    pub floor_at_zero: bool,
    #[serde(default)]
    pub seed: u64,
}

fn default_label() -> String {
    "synthetic".into()
}

fn default_response() -> String {
    "VMT_Person".into()
}

/// The exact data-generating parameters, keyed like design-matrix columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub beta: BTreeMap<String, f64>,
    pub knots: BTreeMap<String, Vec<f64>>,
    pub sd_zone: f64,
    pub sd_hh: f64,
    pub sd_resid: f64,
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        for (what, sd) in [("sd_zone", self.sd_zone), ("sd_hh", self.sd_hh), ("sd_resid", self.sd_resid)] {
            if !(sd >= 0.0 && sd.is_finite()) {
                return Err(Error::invalid(format!("{what} must be finite and >= 0")));
            }
        }
        match &self.layout {
            Layout::Nested {
                n_zones,
                households_per_zone,
                persons_per_household,
            } => {
                if *n_zones == 0 {
                    return Err(Error::invalid("n_zones must be at least 1"));
                }
                households_per_zone.validate("households_per_zone")?;
                persons_per_household.validate("persons_per_household")?;
            }
            Layout::Totals {
                zones,
                households,
                persons,
            } => {
                if *zones == 0 || households < zones || persons < households {
                    return Err(Error::invalid("totals must satisfy 1 <= zones <= households <= persons"));
                }
            }
        }
        if let ResidualShape::StudentT { df } = self.residual {
            if !(df > 2.0) {
                return Err(Error::invalid("Student-t residual needs df > 2"));
            }
        }
        for (k, v) in self.variables.iter().enumerate() {
            match &v.covariate {
                Covariate::Uniform { low, high } => {
                    if !(low.is_finite() && high.is_finite() && low < high) {
                        return Err(Error::invalid(format!("{}: uniform needs finite low < high", v.name)));
                    }
                }
                Covariate::Normal {
                    mean,
                    sd,
                    correlate_with,
                    rho,
                    ..
                } => {
                    if !(mean.is_finite() && sd.is_finite() && *sd >= 0.0) {
                        return Err(Error::invalid(format!("{}: normal needs finite mean and sd >= 0", v.name)));
                    }
                    if let Some(other) = correlate_with {
                        let ok = self.variables[..k].iter().any(|o| {
                            o.name == *other && o.level == v.level && matches!(o.covariate, Covariate::Normal { .. })
                        });
                        if !ok || !(-1.0..=1.0).contains(rho) {
                            return Err(Error::invalid(format!(
                                "{}: correlate_with must name an earlier normal variable at the same level, |rho| <= 1",
                                v.name
                            )));
                        }
                    }
                }
                Covariate::Categorical {
                    categories,
                    probabilities,
                    reference,
                } => {
                    if categories.len() < 2
                        || categories.len() != probabilities.len()
                        || probabilities.iter().any(|p| !(*p >= 0.0))
                        || !categories.contains(reference)
                    {
                        return Err(Error::invalid(format!(
                            "{}: categorical needs >= 2 categories, matching probabilities and a listed reference",
                            v.name
                        )));
                    }
                }
            }
            match (&v.effect, &v.covariate) {
                (Effect::Piecewise { knots, slopes }, Covariate::Uniform { .. } | Covariate::Normal { .. }) => {
                    if knots.windows(2).any(|w| !(w[0] < w[1])) || knots.iter().any(|k| !k.is_finite()) {
                        return Err(Error::invalid(format!("{}: knots must be strictly increasing", v.name)));
                    }
                    if slopes.len() != knots.len() + 1 {
                        return Err(Error::invalid(format!("{}: need knots + 1 slopes", v.name)));
                    }
                }
                (Effect::Categorical { shifts }, Covariate::Categorical { categories, .. }) => {
                    if let Some(bad) = shifts.keys().find(|k| !categories.contains(k)) {
                        return Err(Error::invalid(format!("{}: unknown category `{bad}`", v.name)));
                    }
                }
                (Effect::None, _) => {}
                _ => return Err(Error::invalid(format!("{}: effect does not match the covariate kind", v.name))),
            }
        }
        self.schema().map(|_| ())
    }

    pub fn schema(&self) -> Result<Schema> {
        let vars = self
            .variables
            .iter()
            .map(|v| {
                let mut spec = match &v.covariate {
                    Covariate::Categorical {
                        categories, reference, ..
                    } => {
                        let cats: Vec<&str> = categories.iter().map(String::as_str).collect();
                        VariableSpec::categorical(&v.name, v.level, &cats, reference)
                    }
                    _ => VariableSpec::numeric(&v.name, v.level),
                };
                if let Some(g) = v.group {
                    spec = spec.with_group(g);
                }
                spec.with_units(&v.units)
            })
            .collect();
        Schema::new(&self.response, vars)
    }

    pub fn ground_truth(&self) -> GroundTruth {
        let mut beta = BTreeMap::new();
        let mut knots = BTreeMap::new();
        beta.insert(INTERCEPT.to_string(), self.intercept);
        for v in &self.variables {
            match (&v.effect, &v.covariate) {
                (Effect::Piecewise { knots: ks, slopes }, _) => {
                    if ks.is_empty() {
                        beta.insert(v.name.clone(), slopes[0]);
                    } else {
                        for (label, s) in segment_labels(ks).into_iter().zip(slopes) {
                            beta.insert(format!("{} {}", v.name, label), *s);
                        }
                        knots.insert(v.name.clone(), ks.clone());
                    }
                }
                (Effect::Categorical { shifts }, Covariate::Categorical { categories, reference, .. }) => {
                    for c in categories.iter().filter(|c| *c != reference) {
                        beta.insert(format!("{} [{}]", v.name, c), shifts.get(c).copied().unwrap_or(0.0));
                    }
                }
                _ => {
                    if let Covariate::Categorical { categories, reference, .. } = &v.covariate {
                        for c in categories.iter().filter(|c| *c != reference) {
                            beta.insert(format!("{} [{}]", v.name, c), 0.0);
                        }
                    } else {
                        beta.insert(v.name.clone(), 0.0);
                    }
                }
            }
        }
        GroundTruth {
            beta,
            knots,
            sd_zone: self.sd_zone,
            sd_hh: self.sd_hh,
            sd_resid: self.sd_resid,
        }
    }
}

enum Drawn {
    Numeric(Vec<f64>),
    Categorical(Vec<usize>),
}

fn allocate(n_items: usize, n_groups: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    // first pass guarantees one item per group
    let mut out: Vec<usize> = (0..n_groups).collect();
    out.extend((n_groups..n_items).map(|_| rng.random_range(0..n_groups)));
    out.sort_unstable();
    out
}

/// Draws a wave. The response is the sum of all configured effects plus
/// independent Gaussian zone and household intercepts and a person-level
/// residual; identical configs give bit-identical waves.
pub fn generate(config: &SynthConfig) -> Result<(HierarchicalWave, GroundTruth)> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let (household_zone, person_household) = match &config.layout {
        Layout::Nested {
            n_zones,
            households_per_zone,
            persons_per_household,
        } => {
            let mut hz = Vec::new();
            for z in 0..*n_zones {
                for _ in 0..households_per_zone.draw(&mut rng) {
                    hz.push(z);
                }
            }
            let mut ph = Vec::new();
            for h in 0..hz.len() {
                for _ in 0..persons_per_household.draw(&mut rng) {
                    ph.push(h);
                }
            }
            (hz, ph)
        }
        Layout::Totals {
            zones,
            households,
            persons,
        } => {
            let hz = allocate(*households, *zones, &mut rng);
            let ph = allocate(*persons, *households, &mut rng);
            (hz, ph)
        }
    };
    let n_zones = household_zone.iter().max().map_or(0, |m| m + 1);
    let n_hh = household_zone.len();
    let n = person_household.len();
    let size = |level: Level| match level {
        Level::Person => n,
        Level::Household => n_hh,
        Level::Zone => n_zones,
    };

    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut drawn: Vec<Drawn> = Vec::with_capacity(config.variables.len());
    let mut standardized: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for v in &config.variables {
        let m = size(v.level);
        let d = match &v.covariate {
            Covariate::Uniform { low, high } => Drawn::Numeric((0..m).map(|_| rng.random_range(*low..*high)).collect()),
            Covariate::Normal {
                mean,
                sd,
                min,
                max,
                correlate_with,
                rho,
            } => {
                let mut z: Vec<f64> = (0..m).map(|_| std_normal.sample(&mut rng)).collect();
                if let Some(other) = correlate_with {
                    let base = &standardized[other];
                    let w = (1.0 - rho * rho).sqrt();
                    for (zi, bi) in z.iter_mut().zip(base) {
                        *zi = rho * bi + w * *zi;
                    }
                }
                let vals = z
                    .iter()
                    .map(|zi| {
                        let mut x = mean + sd * zi;
                        if let Some(lo) = min {
                            x = x.max(*lo);
                        }
                        if let Some(hi) = max {
                            x = x.min(*hi);
                        }
                        x
                    })
                    .collect();
                standardized.insert(v.name.clone(), z);
                Drawn::Numeric(vals)
            }
            Covariate::Categorical { probabilities, .. } => {
                let total: f64 = probabilities.iter().sum();
                Drawn::Categorical(
                    (0..m)
                        .map(|_| {
                            let mut u = rng.random_range(0.0..total);
                            for (k, p) in probabilities.iter().enumerate() {
                                if u < *p {
                                    return k;
                                }
                                u -= p;
                            }
                            probabilities.len() - 1
                        })
                        .collect(),
                )
            }
        };
        drawn.push(d);
    }

    let u_zone: Vec<f64> = (0..n_zones).map(|_| config.sd_zone * std_normal.sample(&mut rng)).collect();
    let u_hh: Vec<f64> = (0..n_hh).map(|_| config.sd_hh * std_normal.sample(&mut rng)).collect();
    let eps: Vec<f64> = match config.residual {
        ResidualShape::Gaussian => (0..n).map(|_| config.sd_resid * std_normal.sample(&mut rng)).collect(),
        ResidualShape::StudentT { df } => {
            let t = StudentT::new(df).map_err(|e| Error::invalid(e.to_string()))?;
            let scale = config.sd_resid * ((df - 2.0) / df).sqrt();
            (0..n).map(|_| scale * t.sample(&mut rng)).collect()
        }
    };

    let row_at = |level: Level, person: usize| match level {
        Level::Person => person,
        Level::Household => person_household[person],
        Level::Zone => household_zone[person_household[person]],
    };
    let mut y = vec![config.intercept; n];
    for (v, d) in config.variables.iter().zip(&drawn) {
        for (i, yi) in y.iter_mut().enumerate() {
            let r = row_at(v.level, i);
            *yi += match (&v.effect, d, &v.covariate) {
                (Effect::Piecewise { knots, slopes }, Drawn::Numeric(x), _) => {
                    spline_basis(x[r], knots).iter().zip(slopes).map(|(b, s)| b * s).sum()
                }
                (Effect::Categorical { shifts }, Drawn::Categorical(c), Covariate::Categorical { categories, .. }) => {
                    shifts.get(&categories[c[r]]).copied().unwrap_or(0.0)
                }
                _ => 0.0,
            };
        }
    }
    for i in 0..n {
        let h = person_household[i];
        y[i] += u_zone[household_zone[h]] + u_hh[h] + eps[i];
        if config.floor_at_zero {
            y[i] = y[i].max(0.0);
        }
    }

    if let Some(i) = y.iter().position(|v| *v < 0.0) {
        return Err(Error::invalid(format!(
            "synthetic response of person {} is negative ({}); raise the intercept or set floor_at_zero",
            i + 1,
            y[i]
        )));
    }

    let mut person_cols = BTreeMap::new();
    let mut hh_cols = BTreeMap::new();
    let mut zone_cols = BTreeMap::new();
    for (v, d) in config.variables.iter().zip(drawn) {
        let col = match d {
            Drawn::Numeric(x) => Column::Numeric(x.into_iter().map(Some).collect()),
            Drawn::Categorical(c) => Column::Categorical(c.into_iter().map(Some).collect()),
        };
        match v.level {
            Level::Person => person_cols.insert(v.name.clone(), col),
            Level::Household => hh_cols.insert(v.name.clone(), col),
            Level::Zone => zone_cols.insert(v.name.clone(), col),
        };
    }
    let zone_ids: Vec<String> = (0..n_zones).map(|z| format!("Z{:05}", z + 1)).collect();
    let hh_ids: Vec<String> = (0..n_hh).map(|h| format!("H{:06}", h + 1)).collect();
    let wave = HierarchicalWave::from_parts(
        &config.label,
        config.schema()?,
        (0..n).map(|p| format!("P{:07}", p + 1)).collect(),
        person_household.iter().map(|&h| hh_ids[h].clone()).collect(),
        person_cols,
        y.into_iter().map(Some).collect(),
        hh_ids.clone(),
        household_zone.iter().map(|&z| zone_ids[z].clone()).collect(),
        hh_cols,
        zone_ids,
        zone_cols,
        None,
    )?;
    Ok((wave, config.ground_truth()))
}

/// Writes `persons.csv`, `households.csv`, `zones.csv` and `truth.json`.
pub fn write_synth(wave: &HierarchicalWave, truth: &GroundTruth, dir: &Path) -> Result<()> {
    write_wave(wave, dir)?;
    let path = dir.join("truth.json");
    let text = serde_json::to_string_pretty(truth).map_err(|e| Error::invalid(e.to_string()))?;
    std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linear_config(sd: f64) -> SynthConfig {
        SynthConfig {
            label: "t".into(),
            response: "VMT_Person".into(),
            layout: Layout::Nested {
                n_zones: 5,
                households_per_zone: Count::Fixed(3),
                persons_per_household: Count::Range { min: 1, max: 3 },
            },
            sd_zone: sd,
            sd_hh: sd,
            sd_resid: sd,
            intercept: 0.0,
            variables: vec![SynthVariable {
                name: "x".into(),
                level: Level::Person,
                group: None,
                units: String::new(),
                covariate: Covariate::Uniform { low: 0.0, high: 10.0 },
                effect: Effect::Piecewise {
                    knots: vec![],
                    slopes: vec![2.0],
                },
            }],
            residual: ResidualShape::Gaussian,
            floor_at_zero: false,
            seed: 9,
        }
    }

    #[test]
    fn noise_free_line() {
        let (w, truth) = generate(&linear_config(0.0)).unwrap();
        let x = w.person_numeric("x").unwrap();
        for (xi, yi) in x.iter().zip(&w.response) {
            assert_eq!(yi.unwrap(), 2.0 * xi.unwrap());
        }
        assert_eq!(truth.beta["x"], 2.0);
    }

    #[test]
    fn same_seed_same_wave() {
        let c = linear_config(1.0);
        let (a, _) = generate(&c).unwrap();
        let (b, _) = generate(&c).unwrap();
        assert_eq!(a.response, b.response);
        assert_eq!(a.persons.ids, b.persons.ids);
    }

    #[test]
    fn totals_layout_is_exact() {
        let mut c = linear_config(1.0);
        c.layout = Layout::Totals {
            zones: 7,
            households: 20,
            persons: 45,
        };
        let (w, _) = generate(&c).unwrap();
        assert_eq!(w.counts(), (45, 20, 7));
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut c = linear_config(1.0);
        c.sd_hh = -1.0;
        assert!(generate(&c).is_err());
        let mut c = linear_config(1.0);
        c.variables[0].effect = Effect::Piecewise {
            knots: vec![3.0, 2.0],
            slopes: vec![1.0, 1.0, 1.0],
        };
        assert!(generate(&c).is_err());
    }
}
