//! The run configuration: one TOML file pinning every free choice.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::{CleanPolicy, Schema};
use crate::ensemble::{EnsembleKind, GbdtGrid, MaxFeatures, ModelParams, RfGrid};
use crate::interpret::{ConsolidateSettings, GridSpec, KnotRounding};
use crate::mlm::{Method, StepwiseConfig};
use crate::synth::SynthConfig;
use crate::{Error, Result};

/// Either a path to a TOML file or the table inline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Source<T> {
    Path(PathBuf),
    Inline(Box<T>),
}

impl<T: for<'de> Deserialize<'de> + Clone> Source<T> {
    pub fn resolve(&self, base: &Path) -> Result<T> {
        match self {
            Source::Inline(v) => Ok((**v).clone()),
            Source::Path(p) => read_toml(&base.join(p)),
        }
    }
}

fn read_toml<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// Raw inputs for derived variables.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeriveConfig {
    /// Trip file; when set, the response is replaced by daily VMT per person
    /// (persons without trips get 0).
    pub trips: Option<PathBuf>,
    /// Mode strings counted as personal motorized travel.
    pub motorized_modes: Option<Vec<String>>,
    /// Zone polygons whose centroids stand in for household locations.
    pub zone_polygons: Option<PathBuf>,
    pub road_nodes: Option<PathBuf>,
    pub road_edges: Option<PathBuf>,
    /// Variable name to facility file; each variable becomes the distance
    /// from the zone centroid to the nearest facility.
    #[serde(default)]
    pub facilities: BTreeMap<String, PathBuf>,
    /// Variable receiving the entropy diversity index from the zone counts.
    pub diversity: Option<String>,
}

impl DeriveConfig {
    /// Names (variables and possibly the response) this stage fills in.
    pub fn derived_names(&self, response: &str) -> Vec<String> {
        let mut out: Vec<String> = self.facilities.keys().cloned().collect();
        out.extend(self.diversity.iter().cloned());
        if self.trips.is_some() {
            out.push(response.to_string());
        }
        out
    }
}

/// The three wave CSVs plus their schema.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveFiles<'a> {
    pub persons: &'a Path,
    pub households: &'a Path,
    pub zones: &'a Path,
    pub schema: &'a Source<Schema>,
}

/// A wave read from CSV files (`persons`, `households`, `zones`, `schema`)
/// or generated from a synthetic config (`synth`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WaveEntry {
    pub label: String,
    pub persons: Option<PathBuf>,
    pub households: Option<PathBuf>,
    pub zones: Option<PathBuf>,
    pub schema: Option<Source<Schema>>,
    pub synth: Option<Source<SynthConfig>>,
    /// Replaces the synthetic config's seed, so waves can share one file.
    pub synth_seed: Option<u64>,
    pub derive: Option<DeriveConfig>,
}

impl WaveEntry {
    pub fn files(&self) -> Option<WaveFiles<'_>> {
        Some(WaveFiles {
            persons: self.persons.as_deref()?,
            households: self.households.as_deref()?,
            zones: self.zones.as_deref()?,
            schema: self.schema.as_ref()?,
        })
    }

    fn any_file_key(&self) -> bool {
        self.persons.is_some() || self.households.is_some() || self.zones.is_some() || self.schema.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlConfig {
    #[serde(default = "default_algorithms")]
    pub algorithms: Vec<EnsembleKind>,
    #[serde(default = "default_gbdt_grid")]
    pub gbdt_grid: GbdtGrid,
    #[serde(default = "default_rf_grid")]
    pub rf_grid: RfGrid,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    /// Feature columns; every schema variable when absent.
    pub features: Option<Vec<String>>,
    /// Model whose partial dependence drives knot detection.
    #[serde(default = "default_pdp_model")]
    pub pdp_model: EnsembleKind,
}

fn default_algorithms() -> Vec<EnsembleKind> {
    vec![EnsembleKind::Gbdt, EnsembleKind::Rf]
}

fn default_gbdt_grid() -> GbdtGrid {
    GbdtGrid {
        n_estimators: vec![550, 1000],
        learning_rate: vec![0.01],
        max_depth: vec![5, 7],
        max_features: vec![MaxFeatures::Sqrt],
        subsample: vec![0.8, 0.9],
        min_samples_leaf: vec![1],
    }
}

fn default_rf_grid() -> RfGrid {
    RfGrid {
        n_trees: vec![300, 1000],
        max_depth: vec![9, 15],
        max_features: vec![MaxFeatures::Sqrt],
        min_samples_leaf: vec![1],
    }
}

fn default_k() -> usize {
    5
}

fn default_test_fraction() -> f64 {
    0.2
}

fn default_pdp_model() -> EnsembleKind {
    EnsembleKind::Gbdt
}

impl Default for MlConfig {
    fn default() -> Self {
        MlConfig {
            algorithms: default_algorithms(),
            gbdt_grid: default_gbdt_grid(),
            rf_grid: default_rf_grid(),
            k: default_k(),
            test_fraction: default_test_fraction(),
            features: None,
            pdp_model: default_pdp_model(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterpretConfig {
    #[serde(default)]
    pub grid: GridSpec,
    #[serde(default = "default_max_knots")]
    pub max_knots: usize,
    /// Scales the default per-knot penalty.
    #[serde(default = "one")]
    pub penalty_multiplier: f64,
    /// Variables searched for knots; every numeric feature when absent.
    pub variables: Option<Vec<String>>,
    #[serde(default = "default_rel_tol")]
    pub rel_tol: f64,
    #[serde(default = "default_rounding")]
    pub rounding: KnotRounding,
    /// Knots that replace the detected ones for a variable (an empty list
    /// forces a linear term).
    #[serde(default)]
    pub manual_knots: BTreeMap<String, Vec<f64>>,
}

fn default_max_knots() -> usize {
    2
}

fn one() -> f64 {
    1.0
}

fn default_rel_tol() -> f64 {
    ConsolidateSettings::default().rel_tol
}

fn default_rounding() -> KnotRounding {
    KnotRounding::RangeDigits { digits: 1 }
}

impl Default for InterpretConfig {
    fn default() -> Self {
        InterpretConfig {
            grid: GridSpec::default(),
            max_knots: default_max_knots(),
            penalty_multiplier: 1.0,
            variables: None,
            rel_tol: default_rel_tol(),
            rounding: default_rounding(),
            manual_knots: BTreeMap::new(),
        }
    }
}

impl InterpretConfig {
    pub fn consolidate_settings(&self) -> ConsolidateSettings {
        ConsolidateSettings {
            rel_tol: self.rel_tol,
            rounding: self.rounding,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlmConfig {
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub method: Method,
    /// Variables offered to the stepwise procedure; all when absent.
    pub candidates: Option<Vec<String>>,
}

fn default_alpha() -> f64 {
    0.10
}

impl Default for MlmConfig {
    fn default() -> Self {
        MlmConfig {
            alpha: default_alpha(),
            method: Method::Ml,
            candidates: None,
        }
    }
}

impl MlmConfig {
    pub fn stepwise(&self) -> StepwiseConfig {
        StepwiseConfig {
            alpha: self.alpha,
            method: self.method,
            candidates: self.candidates.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    pub waves: Vec<WaveEntry>,
    #[serde(default)]
    pub clean: CleanPolicy,
    #[serde(default)]
    pub ml: MlConfig,
    #[serde(default)]
    pub interpret: InterpretConfig,
    #[serde(default)]
    pub mlm: MlmConfig,
    /// Directory that relative paths resolve against; the config file's
    /// own directory when loaded from disk.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let mut cfg: RunConfig = read_toml(path)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml_str(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.base_dir = base_dir.to_path_buf();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        self.base_dir.join(p)
    }

    /// Seed for everything stochastic in one wave (split, folds, models).
    pub fn wave_seed(&self, index: usize) -> u64 {
        self.seed.wrapping_add(1_000_003u64.wrapping_mul(index as u64))
    }

    pub fn wave(&self, label: &str) -> Result<(usize, &WaveEntry)> {
        self.waves
            .iter()
            .enumerate()
            .find(|(_, w)| w.label == label)
            .ok_or_else(|| Error::Config(format!("no wave labelled `{label}`")))
    }

    pub fn validate(&self) -> Result<()> {
        if self.waves.is_empty() {
            return Err(Error::Config("at least one wave is required".into()));
        }
        for (i, w) in self.waves.iter().enumerate() {
            let safe = !w.label.is_empty()
                && w
                    .label
                    .chars()
                    .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'));
            if !safe {
                return Err(Error::Config(format!(
                    "wave label `{}` must be non-empty and use only letters, digits, `-`, `_`, `.`",
                    w.label
                )));
            }
            if self.waves[..i].iter().any(|o| o.label == w.label) {
                return Err(Error::Config(format!("duplicate wave label `{}`", w.label)));
            }
            let ok = match &w.synth {
                Some(_) => !w.any_file_key(),
                None => w.files().is_some(),
            };
            if !ok {
                return Err(Error::Config(format!(
                    "wave `{}` needs either `synth` or all of `persons`, `households`, `zones`, `schema`",
                    w.label
                )));
            }
            if w.synth.is_none() && w.synth_seed.is_some() {
                return Err(Error::Config(format!("wave `{}`: synth_seed needs `synth`", w.label)));
            }
            if w.synth.is_some() && w.derive.is_some() {
                return Err(Error::Config(format!(
                    "wave `{}`: derive inputs apply to file-based waves only",
                    w.label
                )));
            }
        }
        self.clean.validate()?;
        let ml = &self.ml;
        if ml.algorithms.is_empty() {
            return Err(Error::Config("ml.algorithms is empty".into()));
        }
        if !ml.algorithms.contains(&ml.pdp_model) {
            return Err(Error::Config(format!(
                "ml.pdp_model `{}` is not among ml.algorithms",
                ml.pdp_model.as_str()
            )));
        }
        if ml.k < 2 {
            return Err(Error::Config("ml.k must be at least 2".into()));
        }
        if !(ml.test_fraction > 0.0 && ml.test_fraction < 1.0) {
            return Err(Error::Config("ml.test_fraction must lie in (0, 1)".into()));
        }
        for kind in &ml.algorithms {
            let empty = match kind {
                EnsembleKind::Gbdt => ml.gbdt_grid.lattice(0).is_empty(),
                EnsembleKind::Rf => ml.rf_grid.lattice(0).is_empty(),
            };
            if empty {
                return Err(Error::Config(format!("ml grid for `{}` is empty", kind.as_str())));
            }
        }
        for p in ml.gbdt_grid.lattice(0).iter().chain(ml.rf_grid.lattice(0).iter()) {
            match p {
                ModelParams::Gbdt(g) => g.validate()?,
                ModelParams::Rf(r) => r.validate()?,
            }
        }
        let it = &self.interpret;
        if !(it.penalty_multiplier >= 0.0 && it.penalty_multiplier.is_finite()) {
            return Err(Error::Config("interpret.penalty_multiplier must be finite and >= 0".into()));
        }
        if !(it.rel_tol >= 0.0 && it.rel_tol.is_finite()) {
            return Err(Error::Config("interpret.rel_tol must be finite and >= 0".into()));
        }
        if !(self.mlm.alpha > 0.0 && self.mlm.alpha < 1.0) {
            return Err(Error::Config("mlm.alpha must lie in (0, 1)".into()));
        }
        Ok(())
    }
}
