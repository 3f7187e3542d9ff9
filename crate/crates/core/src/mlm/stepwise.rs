//! The four-model stepwise procedure with iterative significance drops.

use serde::{Deserialize, Serialize};

use super::inference::{fit_stats, wald, FitStats};
use super::lmm::{fit_lmm, LmmFit, LmmSpec, Method};
use crate::dataset::{build_design, DesignMatrix, HierarchicalWave, TermSpec, VarKind, VariableGroup};
use crate::interpret::KnotSet;
use crate::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepwiseConfig {
    pub alpha: f64,
    pub method: Method,
    /// Variables offered to the procedure; `None` offers every schema
    /// variable.
    pub candidates: Option<Vec<String>>,
}

impl Default for StepwiseConfig {
    fn default() -> Self {
        StepwiseConfig {
            alpha: 0.10,
            method: Method::Ml,
            candidates: None,
        }
    }
}

pub const MODEL_NAMES: [&str; 4] = [
    "Model 1: null",
    "Model 2: personal and household",
    "Model 3: built environment, linear",
    "Model 4: built environment, piecewise",
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DropEvent {
    pub model: String,
    pub variable: String,
    /// Smallest p-value among the variable's columns when it was dropped.
    pub p: f64,
}

#[derive(Debug, Clone)]
pub struct StepModel {
    pub name: String,
    pub terms: Vec<TermSpec>,
    pub design: DesignMatrix,
    pub fit: LmmFit,
    pub stats: FitStats,
}

#[derive(Debug, Clone)]
pub struct StepwiseResult {
    pub models: Vec<StepModel>,
    pub trace: Vec<DropEvent>,
}

/// Fits the terms, then repeatedly removes the variable whose columns are
/// all non-significant at `alpha` and whose best column p-value is the
/// largest, refitting until every remaining variable has a significant
/// column. The intercept is never removed.
pub fn fit_with_drops(
    wave: &HierarchicalWave,
    terms: &[TermSpec],
    knots: &KnotSet,
    spec: &LmmSpec,
    alpha: f64,
    name: &str,
    trace: &mut Vec<DropEvent>,
) -> Result<StepModel> {
    let full = build_design(wave, terms, knots)?;
    let mut kept: Vec<String> = full.terms.iter().skip(1).map(|t| t.variable.clone()).collect();
    loop {
        let design = full.select_terms(&kept);
        let fit = fit_lmm(&design, spec)?;
        let w = wald(&fit);
        let mut worst: Option<(usize, f64)> = None;
        for (k, t) in design.terms.iter().enumerate().skip(1) {
            let best_p = t.columns.clone().map(|j| w[j].p).fold(f64::INFINITY, f64::min);
            if best_p > alpha && worst.is_none_or(|(_, p)| best_p > p) {
                worst = Some((k, best_p));
            }
        }
        match worst {
            Some((k, p)) => {
                let variable = design.terms[k].variable.clone();
                log::info!("{} / {name}: dropping {variable} (p = {p:.4})", wave.label);
                kept.retain(|v| *v != variable);
                trace.push(DropEvent {
                    model: name.to_string(),
                    variable,
                    p,
                });
            }
            None => {
                let stats = fit_stats(&fit, &design);
                let terms = terms.iter().filter(|t| kept.contains(&t.variable)).cloned().collect();
                return Ok(StepModel {
                    name: name.to_string(),
                    terms,
                    design,
                    fit,
                    stats,
                });
            }
        }
    }
}

/// Model 1: intercept only. Model 2: personal and household variables
/// (piecewise where knots exist). Model 3: Model 2's retained terms plus
/// all built-environment variables, linear. Model 4: Model 2's retained
/// terms plus all built-environment variables, piecewise where knots exist.
/// Every model after the first runs the drop loop.
pub fn stepwise_build(wave: &HierarchicalWave, knots: &KnotSet, cfg: &StepwiseConfig) -> Result<StepwiseResult> {
    let spec = LmmSpec {
        method: cfg.method,
        ..LmmSpec::default()
    };
    let offered = |name: &str| cfg.candidates.as_ref().is_none_or(|c| c.iter().any(|v| v == name));
    let term = |name: &str, kind: VarKind, nonlinear: bool| {
        if nonlinear && kind == VarKind::Numeric && !knots.get(name).is_empty() {
            TermSpec::piecewise(name)
        } else {
            TermSpec::linear(name)
        }
    };
    let mut person_hh = Vec::new();
    let mut be_linear = Vec::new();
    let mut be_piecewise = Vec::new();
    for v in &wave.schema.variables {
        if !offered(&v.name) {
            continue;
        }
        match v.group() {
            VariableGroup::BuiltEnvironment => {
                be_linear.push(term(&v.name, v.kind, false));
                be_piecewise.push(term(&v.name, v.kind, true));
            }
            _ => person_hh.push(term(&v.name, v.kind, true)),
        }
    }

    let mut trace = Vec::new();
    let mut models = Vec::with_capacity(4);
    models.push(fit_with_drops(wave, &[], knots, &spec, cfg.alpha, MODEL_NAMES[0], &mut trace)?);
    let m2 = fit_with_drops(wave, &person_hh, knots, &spec, cfg.alpha, MODEL_NAMES[1], &mut trace)?;
    let base = m2.terms.clone();
    models.push(m2);
    for (name, be) in [(MODEL_NAMES[2], &be_linear), (MODEL_NAMES[3], &be_piecewise)] {
        let terms: Vec<TermSpec> = base.iter().chain(be.iter()).cloned().collect();
        models.push(fit_with_drops(wave, &terms, knots, &spec, cfg.alpha, name, &mut trace)?);
    }
    Ok(StepwiseResult { models, trace })
}
