//! Regression tree ensembles: gradient boosting and random forests built on
//! an exact squared-error CART learner, plus cross-validated grid search.

mod cv;
mod io;
mod tree;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use cv::{grid_search_cv, kfold_indices, split_train_test, test_metrics, CvRow, CvTable, Metrics, Split};
pub use io::{load_model, save_model, write_cv_table, write_importance, MODEL_FORMAT_VERSION};
pub use tree::{Node, Tree, TIE_RTOL};

/// Dense row-major feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    n_rows: usize,
    n_cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(n_rows: usize, n_cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n_rows * n_cols {
            return Err(Error::DimensionMismatch {
                expected: n_rows * n_cols,
                got: data.len(),
            });
        }
        Ok(Matrix { n_rows, n_cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n_cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * n_cols);
        for r in rows {
            if r.len() != n_cols {
                return Err(Error::DimensionMismatch {
                    expected: n_cols,
                    got: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Matrix {
            n_rows: rows.len(),
            n_cols,
            data,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n_cols..(i + 1) * self.n_cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n_cols + j]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.n_rows).map(|i| self.get(i, j)).collect()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(idx.len() * self.n_cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            n_rows: idx.len(),
            n_cols: self.n_cols,
            data,
        }
    }
}

/// Number of features examined at each split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MaxFeaturesRepr", into = "MaxFeaturesRepr")]
pub enum MaxFeatures {
    All,
    Sqrt,
    Log2,
    Fraction(f64),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum MaxFeaturesRepr {
    Name(String),
    Fraction(f64),
}

impl TryFrom<MaxFeaturesRepr> for MaxFeatures {
    type Error = String;
    fn try_from(r: MaxFeaturesRepr) -> std::result::Result<Self, String> {
        match r {
            MaxFeaturesRepr::Name(s) => match s.as_str() {
                "all" | "auto" => Ok(MaxFeatures::All),
                "sqrt" => Ok(MaxFeatures::Sqrt),
                "log2" => Ok(MaxFeatures::Log2),
                other => Err(format!("unknown max_features `{other}`")),
            },
            MaxFeaturesRepr::Fraction(f) if f > 0.0 && f <= 1.0 => Ok(MaxFeatures::Fraction(f)),
            MaxFeaturesRepr::Fraction(f) => Err(format!("max_features fraction {f} outside (0, 1]")),
        }
    }
}

impl From<MaxFeatures> for MaxFeaturesRepr {
    fn from(m: MaxFeatures) -> Self {
        match m {
            MaxFeatures::All => MaxFeaturesRepr::Name("all".into()),
            MaxFeatures::Sqrt => MaxFeaturesRepr::Name("sqrt".into()),
            MaxFeatures::Log2 => MaxFeaturesRepr::Name("log2".into()),
            MaxFeatures::Fraction(f) => MaxFeaturesRepr::Fraction(f),
        }
    }
}

impl MaxFeatures {
    pub fn resolve(&self, n_features: usize) -> usize {
        let nf = n_features as f64;
        let k = match *self {
            MaxFeatures::All => n_features,
            MaxFeatures::Sqrt => nf.sqrt().ceil() as usize,
            MaxFeatures::Log2 => nf.log2().ceil() as usize,
            MaxFeatures::Fraction(f) => (f * nf).ceil() as usize,
        };
        k.clamp(1, n_features.max(1))
    }

    fn validate(&self) -> Result<()> {
        match *self {
            MaxFeatures::Fraction(f) if !(f > 0.0 && f <= 1.0) => {
                Err(Error::invalid(format!("max_features fraction {f} outside (0, 1]")))
            }
            _ => Ok(()),
        }
    }
}

impl std::fmt::Display for MaxFeatures {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MaxFeatures::All => write!(f, "all"),
            MaxFeatures::Sqrt => write!(f, "sqrt"),
            MaxFeatures::Log2 => write!(f, "log2"),
            MaxFeatures::Fraction(x) => write!(f, "{x}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbdtParams {
    pub n_estimators: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub max_features: MaxFeatures,
    pub subsample: f64,
    pub min_samples_leaf: usize,
    pub seed: u64,
}

impl Default for GbdtParams {
    fn default() -> Self {
        GbdtParams {
            n_estimators: 100,
            learning_rate: 0.1,
            max_depth: 3,
            max_features: MaxFeatures::All,
            subsample: 1.0,
            min_samples_leaf: 1,
            seed: 0,
        }
    }
}

impl GbdtParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_estimators == 0 {
            return Err(Error::invalid("n_estimators must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err(Error::invalid(format!("learning_rate {} outside (0, 1]", self.learning_rate)));
        }
        if self.max_depth == 0 {
            return Err(Error::invalid("max_depth must be at least 1"));
        }
        if !(self.subsample > 0.0 && self.subsample <= 1.0) {
            return Err(Error::invalid(format!("subsample {} outside (0, 1]", self.subsample)));
        }
        if self.min_samples_leaf == 0 {
            return Err(Error::invalid("min_samples_leaf must be at least 1"));
        }
        self.max_features.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RfParams {
    pub n_trees: usize,
    /// `None` grows trees until leaves are pure or too small to split.
    pub max_depth: Option<usize>,
    pub max_features: MaxFeatures,
    pub min_samples_leaf: usize,
    /// Disable to train every tree on the full sample.
    #[serde(default = "default_true")]
    pub bootstrap: bool,
    pub seed: u64,
}

fn default_true() -> bool {
    true
}

impl Default for RfParams {
    fn default() -> Self {
        RfParams {
            n_trees: 100,
            max_depth: None,
            max_features: MaxFeatures::All,
            min_samples_leaf: 1,
            bootstrap: true,
            seed: 0,
        }
    }
}

impl RfParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 {
            return Err(Error::invalid("n_trees must be at least 1"));
        }
        if self.max_depth == Some(0) {
            return Err(Error::invalid("max_depth must be at least 1"));
        }
        if self.min_samples_leaf == 0 {
            return Err(Error::invalid("min_samples_leaf must be at least 1"));
        }
        self.max_features.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ModelParams {
    Gbdt(GbdtParams),
    Rf(RfParams),
}

impl ModelParams {
    pub fn min_samples_leaf(&self) -> usize {
        match self {
            ModelParams::Gbdt(p) => p.min_samples_leaf,
            ModelParams::Rf(p) => p.min_samples_leaf,
        }
    }

    pub fn with_seed(&self, seed: u64) -> ModelParams {
        match self {
            ModelParams::Gbdt(p) => ModelParams::Gbdt(GbdtParams { seed, ..p.clone() }),
            ModelParams::Rf(p) => ModelParams::Rf(RfParams { seed, ..p.clone() }),
        }
    }

    pub fn fit(&self, x: &Matrix, y: &[f64], feature_names: &[String]) -> Result<EnsembleModel> {
        match self {
            ModelParams::Gbdt(p) => fit_gbdt(x, y, p, feature_names),
            ModelParams::Rf(p) => fit_rf(x, y, p, feature_names),
        }
    }

    /// Compact `key=value` description used in CV tables.
    pub fn describe(&self) -> String {
        match self {
            ModelParams::Gbdt(p) => format!(
                "n_estimators={} learning_rate={} max_depth={} max_features={} subsample={} min_samples_leaf={}",
                p.n_estimators, p.learning_rate, p.max_depth, p.max_features, p.subsample, p.min_samples_leaf
            ),
            ModelParams::Rf(p) => format!(
                "n_trees={} max_depth={} max_features={} min_samples_leaf={} bootstrap={}",
                p.n_trees,
                p.max_depth.map_or("none".to_string(), |d| d.to_string()),
                p.max_features,
                p.min_samples_leaf,
                p.bootstrap
            ),
        }
    }
}

/// Lattice of boosting hyperparameters; candidates enumerate in field order
/// with the first field outermost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbdtGrid {
    pub n_estimators: Vec<usize>,
    pub learning_rate: Vec<f64>,
    pub max_depth: Vec<usize>,
    pub max_features: Vec<MaxFeatures>,
    pub subsample: Vec<f64>,
    #[serde(default = "one_leaf")]
    pub min_samples_leaf: Vec<usize>,
}

/// Lattice of forest hyperparameters, enumerated like [`GbdtGrid`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RfGrid {
    pub n_trees: Vec<usize>,
    /// 0 stands for unlimited depth.
    pub max_depth: Vec<usize>,
    pub max_features: Vec<MaxFeatures>,
    #[serde(default = "one_leaf")]
    pub min_samples_leaf: Vec<usize>,
}

fn one_leaf() -> Vec<usize> {
    vec![1]
}

impl GbdtGrid {
    pub fn lattice(&self, seed: u64) -> Vec<ModelParams> {
        let mut out = Vec::new();
        for &n_estimators in &self.n_estimators {
            for &learning_rate in &self.learning_rate {
                for &max_depth in &self.max_depth {
                    for &max_features in &self.max_features {
                        for &subsample in &self.subsample {
                            for &min_samples_leaf in &self.min_samples_leaf {
                                out.push(ModelParams::Gbdt(GbdtParams {
                                    n_estimators,
                                    learning_rate,
                                    max_depth,
                                    max_features,
                                    subsample,
                                    min_samples_leaf,
                                    seed,
                                }));
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

impl RfGrid {
    pub fn lattice(&self, seed: u64) -> Vec<ModelParams> {
        let mut out = Vec::new();
        for &n_trees in &self.n_trees {
            for &depth in &self.max_depth {
                for &max_features in &self.max_features {
                    for &min_samples_leaf in &self.min_samples_leaf {
                        out.push(ModelParams::Rf(RfParams {
                            n_trees,
                            max_depth: (depth > 0).then_some(depth),
                            max_features,
                            min_samples_leaf,
                            bootstrap: true,
                            seed,
                        }));
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnsembleKind {
    Gbdt,
    Rf,
}

impl EnsembleKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            EnsembleKind::Gbdt => "gbdt",
            EnsembleKind::Rf => "rf",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleModel {
    pub kind: EnsembleKind,
    pub trees: Vec<Tree>,
    /// Mean training response for boosting; absent for forests.
    pub base_prediction: Option<f64>,
    /// Shrinkage applied to every boosted tree; 1 for forests.
    pub learning_rate: f64,
    pub params: ModelParams,
    pub feature_names: Vec<String>,
}

impl EnsembleModel {
    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        match self.kind {
            EnsembleKind::Gbdt => {
                let s: f64 = self.trees.iter().map(|t| t.predict(row)).sum();
                self.base_prediction.unwrap_or(0.0) + self.learning_rate * s
            }
            EnsembleKind::Rf => {
                let s: f64 = self.trees.iter().map(|t| t.predict(row)).sum();
                s / self.trees.len() as f64
            }
        }
    }
}

/// Per-row predictions.
pub fn predict(model: &EnsembleModel, x: &Matrix) -> Result<Vec<f64>> {
    if x.n_cols() != model.n_features() {
        return Err(Error::DimensionMismatch {
            expected: model.n_features(),
            got: x.n_cols(),
        });
    }
    Ok((0..x.n_rows()).map(|i| model.predict_row(x.row(i))).collect())
}

fn check_training(x: &Matrix, y: &[f64], min_samples_leaf: usize, names: &[String]) -> Result<()> {
    if x.n_rows() == 0 || x.n_cols() == 0 {
        return Err(Error::invalid("empty training data"));
    }
    if x.n_rows() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.n_rows(),
            got: y.len(),
        });
    }
    if names.len() != x.n_cols() {
        return Err(Error::DimensionMismatch {
            expected: x.n_cols(),
            got: names.len(),
        });
    }
    if y.len() < 2 * min_samples_leaf {
        return Err(Error::invalid(format!(
            "{} rows cannot satisfy min_samples_leaf = {min_samples_leaf}",
            y.len()
        )));
    }
    if x.data().iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::invalid("training data contains non-finite values"));
    }
    Ok(())
}

/// Squared-error gradient boosting. Each iteration fits a depth-limited
/// tree to the current residuals on a row subsample drawn without
/// replacement.
pub fn fit_gbdt(x: &Matrix, y: &[f64], params: &GbdtParams, feature_names: &[String]) -> Result<EnsembleModel> {
    params.validate()?;
    check_training(x, y, params.min_samples_leaf, feature_names)?;
    let n = y.len();
    let data = tree::TrainingData::new(x);
    let cfg = tree::GrowConfig {
        max_depth: Some(params.max_depth),
        min_samples_leaf: params.min_samples_leaf,
        max_features: params.max_features.resolve(x.n_cols()),
    };
    let base = crate::stats::mean(y);
    let mut fitted = vec![base; n];
    let mut resid = vec![0.0; n];
    let sample_size = ((params.subsample * n as f64).round() as usize).clamp(2 * params.min_samples_leaf, n);
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut trees = Vec::with_capacity(params.n_estimators);
    let mut weights = vec![0u32; n];
    for _ in 0..params.n_estimators {
        for i in 0..n {
            resid[i] = y[i] - fitted[i];
        }
        if sample_size == n {
            weights.fill(1);
        } else {
            weights.fill(0);
            for i in rand::seq::index::sample(&mut rng, n, sample_size) {
                weights[i] = 1;
            }
        }
        let t = data.grow(&resid, &weights, &cfg, &mut rng);
        for (i, f) in fitted.iter_mut().enumerate() {
            *f += params.learning_rate * t.predict_with(|j| data.value(j, i));
        }
        trees.push(t);
    }
    Ok(EnsembleModel {
        kind: EnsembleKind::Gbdt,
        trees,
        base_prediction: Some(base),
        learning_rate: params.learning_rate,
        params: ModelParams::Gbdt(params.clone()),
        feature_names: feature_names.to_vec(),
    })
}

/// Random forest: trees on bootstrap resamples (size n, with replacement)
/// with per-split feature subsampling; predictions average the trees. Each
/// tree draws from its own random stream, so results do not depend on how
/// trees are scheduled across threads.
pub fn fit_rf(x: &Matrix, y: &[f64], params: &RfParams, feature_names: &[String]) -> Result<EnsembleModel> {
    params.validate()?;
    check_training(x, y, params.min_samples_leaf, feature_names)?;
    let n = y.len();
    let data = tree::TrainingData::new(x);
    let cfg = tree::GrowConfig {
        max_depth: params.max_depth,
        min_samples_leaf: params.min_samples_leaf,
        max_features: params.max_features.resolve(x.n_cols()),
    };
    let trees: Vec<Tree> = (0..params.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
            rng.set_stream(t as u64);
            let mut weights = vec![0u32; n];
            if params.bootstrap {
                use rand::Rng;
                for _ in 0..n {
                    weights[rng.random_range(0..n)] += 1;
                }
            } else {
                weights.fill(1);
            }
            data.grow(y, &weights, &cfg, &mut rng)
        })
        .collect();
    Ok(EnsembleModel {
        kind: EnsembleKind::Rf,
        trees,
        base_prediction: None,
        learning_rate: 1.0,
        params: ModelParams::Rf(params.clone()),
        feature_names: feature_names.to_vec(),
    })
}

/// Total squared-error impurity decrease per feature over all splits,
/// normalized to sum to 1.
pub fn impurity_importance(model: &EnsembleModel) -> Result<Vec<f64>> {
    let mut totals = vec![0.0; model.n_features()];
    for t in &model.trees {
        for node in &t.nodes {
            if let Node::Split { feature, gain, .. } = node {
                totals[*feature] += gain;
            }
        }
    }
    let sum: f64 = totals.iter().sum();
    if !(sum > 0.0) {
        return Err(Error::NoSplits);
    }
    Ok(totals.into_iter().map(|v| v / sum).collect())
}
