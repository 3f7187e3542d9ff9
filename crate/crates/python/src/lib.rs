//! Python bindings: synthetic waves, ensembles, partial dependence, knot
//! detection, mixed models and the pipeline runner.

use std::collections::BTreeMap;
use std::path::Path;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

use bevmt_core::dataset::{build_design, load_wave, write_wave, HierarchicalWave, Schema, TermSpec};
use bevmt_core::derive::{entropy_diversity as core_entropy, haversine_miles as core_haversine, Coordinate};
use bevmt_core::ensemble::{
    fit_gbdt, fit_rf, impurity_importance, load_model, predict, save_model, EnsembleModel, GbdtParams, MaxFeatures,
    Matrix, RfParams,
};
use bevmt_core::interpret::{compute_pdp, detect_knots_with_penalty, default_penalty, GridSpec, KnotSet, PdpCurve};
use bevmt_core::mlm::{fit_lmm as core_fit_lmm, fit_stats, stepwise_build, wald, LmmSpec, Method, StepwiseConfig};
use bevmt_core::pipeline::{run_all as core_run_all, run_stage as core_run_stage, OutputDir, RunConfig};
use bevmt_core::synth::{generate, SynthConfig};

const BUNDLED_SYNTH: &str = include_str!("../../core/configs/synth_wave.toml");

fn err(e: bevmt_core::Error) -> PyErr {
    match e {
        bevmt_core::Error::Io { .. } => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

/// Serializes through JSON so nested structures arrive as plain dicts.
fn to_py<T: Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<Matrix> {
    Matrix::from_rows(&rows).map_err(err)
}

fn method(name: &str) -> PyResult<Method> {
    match name {
        "ml" => Ok(Method::Ml),
        "reml" => Ok(Method::Reml),
        _ => Err(PyValueError::new_err(format!("unknown method `{name}`; expected ml or reml"))),
    }
}

fn max_features(spec: &str) -> PyResult<MaxFeatures> {
    match spec {
        "all" => Ok(MaxFeatures::All),
        "sqrt" => Ok(MaxFeatures::Sqrt),
        "log2" => Ok(MaxFeatures::Log2),
        s => s
            .parse::<f64>()
            .map(MaxFeatures::Fraction)
            .map_err(|_| PyValueError::new_err(format!("bad max_features `{s}`"))),
    }
}

fn knot_set(knots: Option<BTreeMap<String, Vec<f64>>>) -> PyResult<KnotSet> {
    let mut ks = KnotSet::default();
    for (v, k) in knots.unwrap_or_default() {
        ks.insert(&v, k).map_err(err)?;
    }
    Ok(ks)
}

/// A person / household / zone survey wave.
#[pyclass(name = "Wave", module = "bevmt")]
struct PyWave {
    inner: HierarchicalWave,
}

#[pymethods]
impl PyWave {
    /// Generates a synthetic wave. Returns `(wave, truth)`; `config` is a
    /// TOML document and defaults to the bundled three-level process.
    #[staticmethod]
    #[pyo3(signature = (config=None, seed=None))]
    fn synthesize(py: Python<'_>, config: Option<&str>, seed: Option<u64>) -> PyResult<(Self, Py<PyAny>)> {
        let mut cfg: SynthConfig =
            toml::from_str(config.unwrap_or(BUNDLED_SYNTH)).map_err(|e| PyValueError::new_err(e.to_string()))?;
        if let Some(s) = seed {
            cfg.seed = s;
        }
        let (wave, truth) = generate(&cfg).map_err(err)?;
        Ok((PyWave { inner: wave }, to_py(py, &truth)?))
    }

    /// Reads person, household and zone CSVs described by a TOML schema.
    #[staticmethod]
    fn load(label: &str, persons: &str, households: &str, zones: &str, schema: &str) -> PyResult<Self> {
        let schema: Schema = toml::from_str(schema).map_err(|e| PyValueError::new_err(e.to_string()))?;
        let inner = load_wave(label, Path::new(persons), Path::new(households), Path::new(zones), &schema).map_err(err)?;
        Ok(PyWave { inner })
    }

    fn write(&self, dir: &str) -> PyResult<()> {
        write_wave(&self.inner, Path::new(dir)).map_err(err)
    }

    #[getter]
    fn label(&self) -> String {
        self.inner.label.clone()
    }

    /// `(persons, households, zones)`
    fn counts(&self) -> (usize, usize, usize) {
        self.inner.counts()
    }

    fn variables(&self) -> Vec<String> {
        self.inner.schema.variables.iter().map(|v| v.name.clone()).collect()
    }

    fn response(&self) -> Vec<Option<f64>> {
        self.inner.response.clone()
    }

    /// A numeric variable broadcast to persons.
    fn numeric(&self, name: &str) -> PyResult<Vec<Option<f64>>> {
        self.inner.person_numeric(name).map_err(err)
    }

    fn schema(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.inner.schema)
    }

    fn __repr__(&self) -> String {
        let (p, h, z) = self.inner.counts();
        format!("Wave('{}', persons={p}, households={h}, zones={z})", self.inner.label)
    }
}

/// A fitted gradient-boosting or random-forest regressor.
#[pyclass(name = "Model", module = "bevmt")]
struct PyModel {
    inner: EnsembleModel,
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    #[pyo3(signature = (x, y, feature_names, n_estimators=100, learning_rate=0.1, max_depth=3,
                        max_features="all", subsample=1.0, min_samples_leaf=1, seed=0))]
    #[allow(clippy::too_many_arguments)]
    fn fit_gbdt(
        x: Vec<Vec<f64>>,
        y: Vec<f64>,
        feature_names: Vec<String>,
        n_estimators: usize,
        learning_rate: f64,
        max_depth: usize,
        max_features: &str,
        subsample: f64,
        min_samples_leaf: usize,
        seed: u64,
    ) -> PyResult<Self> {
        let params = GbdtParams {
            n_estimators,
            learning_rate,
            max_depth,
            max_features: self::max_features(max_features)?,
            subsample,
            min_samples_leaf,
            seed,
        };
        let inner = fit_gbdt(&matrix(x)?, &y, &params, &feature_names).map_err(err)?;
        Ok(PyModel { inner })
    }

    #[staticmethod]
    #[pyo3(signature = (x, y, feature_names, n_trees=100, max_depth=None, max_features="sqrt",
                        min_samples_leaf=1, bootstrap=true, seed=0))]
    #[allow(clippy::too_many_arguments)]
    fn fit_rf(
        x: Vec<Vec<f64>>,
        y: Vec<f64>,
        feature_names: Vec<String>,
        n_trees: usize,
        max_depth: Option<usize>,
        max_features: &str,
        min_samples_leaf: usize,
        bootstrap: bool,
        seed: u64,
    ) -> PyResult<Self> {
        let params = RfParams {
            n_trees,
            max_depth,
            max_features: self::max_features(max_features)?,
            min_samples_leaf,
            bootstrap,
            seed,
        };
        let inner = fit_rf(&matrix(x)?, &y, &params, &feature_names).map_err(err)?;
        Ok(PyModel { inner })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(PyModel {
            inner: load_model(Path::new(path)).map_err(err)?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        save_model(&self.inner, Path::new(path)).map_err(err)
    }

    #[getter]
    fn kind(&self) -> &'static str {
        self.inner.kind.as_str()
    }

    #[getter]
    fn feature_names(&self) -> Vec<String> {
        self.inner.feature_names.clone()
    }

    fn predict(&self, x: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
        predict(&self.inner, &matrix(x)?).map_err(err)
    }

    /// Impurity-reduction shares, summing to one.
    fn importance(&self) -> PyResult<Vec<f64>> {
        impurity_importance(&self.inner).map_err(err)
    }

    /// Partial dependence of `feature` over `grid`, or over `points`
    /// quantiles between the 1st and 99th percentile. Returns `(grid, avg)`.
    #[pyo3(signature = (x, feature, grid=None, points=50))]
    fn pdp(&self, x: Vec<Vec<f64>>, feature: &str, grid: Option<Vec<f64>>, points: usize) -> PyResult<(Vec<f64>, Vec<f64>)> {
        let j = self
            .inner
            .feature_names
            .iter()
            .position(|f| f == feature)
            .ok_or_else(|| PyValueError::new_err(format!("unknown feature `{feature}`")))?;
        let spec = match grid {
            Some(values) => GridSpec::Explicit { values },
            None => GridSpec::Quantiles {
                points,
                lower: 1.0,
                upper: 99.0,
            },
        };
        let curve = compute_pdp(&self.inner, &matrix(x)?, j, &spec, "").map_err(err)?;
        Ok((curve.grid, curve.avg_pred))
    }
}

/// Knots of a piecewise-linear fit to a curve, as `(value, score)` pairs
/// sorted by value.
#[pyfunction]
#[pyo3(signature = (grid, values, max_knots=3, penalty=None))]
fn detect_knots(grid: Vec<f64>, values: Vec<f64>, max_knots: usize, penalty: Option<f64>) -> PyResult<Vec<(f64, f64)>> {
    let curve = PdpCurve {
        feature: "x".into(),
        wave: String::new(),
        grid,
        avg_pred: values,
    };
    curve.validate().map_err(err)?;
    let penalty = penalty.unwrap_or_else(|| default_penalty(&curve));
    let found = detect_knots_with_penalty(&curve, max_knots, penalty).map_err(err)?;
    Ok(found.into_iter().map(|k| (k.value, k.score)).collect())
}

/// Linear-spline basis of `x` for the given knots.
#[pyfunction]
fn spline_basis(x: f64, knots: Vec<f64>) -> Vec<f64> {
    bevmt_core::interpret::spline_basis(x, &knots)
}

/// Fits a random-intercept mixed model. Variables listed in `knots` enter
/// piecewise, the rest linearly.
#[pyfunction]
#[pyo3(signature = (wave, variables, knots=None, method="ml", household=true, zone=true))]
fn fit_lmm(
    py: Python<'_>,
    wave: &PyWave,
    variables: Vec<String>,
    knots: Option<BTreeMap<String, Vec<f64>>>,
    method: &str,
    household: bool,
    zone: bool,
) -> PyResult<Py<PyAny>> {
    let ks = knot_set(knots)?;
    let terms: Vec<TermSpec> = variables
        .iter()
        .map(|v| {
            if ks.get(v).is_empty() {
                TermSpec::linear(v)
            } else {
                TermSpec::piecewise(v)
            }
        })
        .collect();
    let design = build_design(&wave.inner, &terms, &ks).map_err(err)?;
    let spec = LmmSpec {
        method: self::method(method)?,
        household_level: household,
        zone_level: zone,
    };
    let fit = core_fit_lmm(&design, &spec).map_err(err)?;
    #[derive(Serialize)]
    struct Out<'a> {
        coefficients: Vec<bevmt_core::mlm::WaldRow>,
        varcomps: bevmt_core::mlm::VarianceComponents,
        stats: bevmt_core::mlm::FitStats,
        n_obs: usize,
        k_params: usize,
        converged: bool,
        warnings: &'a [String],
    }
    to_py(
        py,
        &Out {
            coefficients: wald(&fit),
            varcomps: fit.varcomps,
            stats: fit_stats(&fit, &design),
            n_obs: fit.n_obs,
            k_params: fit.k_params,
            converged: fit.converged,
            warnings: &fit.warnings,
        },
    )
}

/// Builds the four nested models with backward elimination. Returns one
/// dict per model plus the drop trace.
#[pyfunction]
#[pyo3(signature = (wave, knots=None, alpha=0.10, method="ml"))]
fn stepwise(
    py: Python<'_>,
    wave: &PyWave,
    knots: Option<BTreeMap<String, Vec<f64>>>,
    alpha: f64,
    method: &str,
) -> PyResult<Py<PyAny>> {
    let cfg = StepwiseConfig {
        alpha,
        method: self::method(method)?,
        candidates: None,
    };
    let res = stepwise_build(&wave.inner, &knot_set(knots)?, &cfg).map_err(err)?;
    #[derive(Serialize)]
    struct Model {
        name: String,
        coefficients: Vec<bevmt_core::mlm::WaldRow>,
        stats: bevmt_core::mlm::FitStats,
    }
    #[derive(Serialize)]
    struct Out {
        models: Vec<Model>,
        drops: Vec<bevmt_core::mlm::DropEvent>,
    }
    let out = Out {
        models: res
            .models
            .iter()
            .map(|m| Model {
                name: m.name.clone(),
                coefficients: wald(&m.fit),
                stats: m.stats,
            })
            .collect(),
        drops: res.trace,
    };
    to_py(py, &out)
}

/// Normalized four-category land-use entropy.
#[pyfunction]
fn entropy_diversity(households: f64, basic: f64, retail: f64, service: f64) -> PyResult<f64> {
    core_entropy(households, basic, retail, service).map_err(err)
}

#[pyfunction]
fn haversine_miles(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> f64 {
    core_haversine(Coordinate { lat: lat1, lon: lon1 }, Coordinate { lat: lat2, lon: lon2 })
}

/// Runs every stage for a config file and returns the manifest.
#[pyfunction]
#[pyo3(signature = (config, out, jobs=1))]
fn run_all(py: Python<'_>, config: &str, out: &str, jobs: usize) -> PyResult<Py<PyAny>> {
    let cfg = RunConfig::from_file(Path::new(config)).map_err(err)?;
    let manifest = py
        .detach(|| core_run_all(&cfg, Path::new(out), config, jobs))
        .map_err(err)?;
    to_py(py, &manifest)
}

/// Runs one named stage (`prepare`, `ml`, `pdp`, `knots`, `mlm`,
/// `elasticity` or `synth`).
#[pyfunction]
fn run_stage(py: Python<'_>, stage: &str, config: &str, out: &str) -> PyResult<()> {
    let cfg = RunConfig::from_file(Path::new(config)).map_err(err)?;
    py.detach(|| core_run_stage(stage, &cfg, &OutputDir::new(Path::new(out))))
        .map_err(err)
}

#[pymodule]
#[pyo3(name = "bevmt")]
fn bevmt_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyWave>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(detect_knots, m)?)?;
    m.add_function(wrap_pyfunction!(spline_basis, m)?)?;
    m.add_function(wrap_pyfunction!(fit_lmm, m)?)?;
    m.add_function(wrap_pyfunction!(stepwise, m)?)?;
    m.add_function(wrap_pyfunction!(entropy_diversity, m)?)?;
    m.add_function(wrap_pyfunction!(haversine_miles, m)?)?;
    m.add_function(wrap_pyfunction!(run_all, m)?)?;
    m.add_function(wrap_pyfunction!(run_stage, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
