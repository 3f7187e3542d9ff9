//! Wald tests, information criteria, Nakagawa R^2 and elasticities.

use serde::Serialize;

use super::lmm::{LmmFit, VarianceComponents};
use crate::dataset::{DesignMatrix, VarKind, VariableGroup, Schema};
use crate::stats::{mean, pop_variance, two_sided_p};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WaldRow {
    pub term: String,
    pub beta: f64,
    pub se: f64,
    pub z: f64,
    pub p: f64,
    pub stars: &'static str,
}

/// Significance stars at the 1%, 5% and 10% levels.
pub fn stars(p: f64) -> &'static str {
    if p < 0.01 {
        "***"
    } else if p < 0.05 {
        "**"
    } else if p < 0.10 {
        "*"
    } else {
        ""
    }
}

/// z statistic and two-sided normal p-value of one coefficient. A zero
/// coefficient has p = 1 whatever its standard error.
pub fn wald_test(beta: f64, se: f64) -> (f64, f64) {
    if beta == 0.0 {
        return (0.0, 1.0);
    }
    let z = beta / se;
    (z, two_sided_p(z))
}

pub fn wald(fit: &LmmFit) -> Vec<WaldRow> {
    fit.columns
        .iter()
        .zip(fit.beta.iter().zip(&fit.se))
        .map(|(term, (&beta, &se))| {
            let (z, p) = wald_test(beta, se);
            WaldRow {
                term: term.clone(),
                beta,
                se,
                z,
                p,
                stars: stars(p),
            }
        })
        .collect()
}

/// (AIC, BIC) = (-2 logLik + 2k, -2 logLik + k ln n).
pub fn information_criteria(loglik: f64, k_params: usize, n_obs: usize) -> (f64, f64) {
    let k = k_params as f64;
    (-2.0 * loglik + 2.0 * k, -2.0 * loglik + k * (n_obs as f64).ln())
}

/// Marginal and conditional R^2 from the fixed-effect prediction variance
/// and the three variance components.
pub fn r2_from_components(var_fixed: f64, vc: &VarianceComponents) -> (f64, f64) {
    let random = vc.sd_zone.powi(2) + vc.sd_hh.powi(2);
    let total = var_fixed + random + vc.sd_resid.powi(2);
    (var_fixed / total, (var_fixed + random) / total)
}

/// Nakagawa marginal and conditional R^2, with the fixed-effect variance
/// taken as the population variance of `X beta` over the sample.
pub fn nakagawa_r2(fit: &LmmFit, design: &DesignMatrix) -> (f64, f64) {
    let fitted: Vec<f64> = (0..design.n_rows())
        .map(|i| design.row(i).iter().zip(&fit.beta).map(|(a, b)| a * b).sum())
        .collect();
    let var_f = if fit.beta.len() == 1 { 0.0 } else { pop_variance(&fitted) };
    r2_from_components(var_f, &fit.varcomps)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FitStats {
    pub loglik: f64,
    pub aic: f64,
    pub bic: f64,
    pub r2_marginal: f64,
    pub r2_conditional: f64,
}

pub fn fit_stats(fit: &LmmFit, design: &DesignMatrix) -> FitStats {
    let (aic, bic) = information_criteria(fit.loglik, fit.k_params, fit.n_obs);
    let (r2_marginal, r2_conditional) = nakagawa_r2(fit, design);
    FitStats {
        loglik: fit.loglik,
        aic,
        bic,
        r2_marginal,
        r2_conditional,
    }
}

/// Point elasticity at the means: `beta * mean_x / mean_y`.
pub fn elasticity(beta: f64, mean_x: f64, mean_y: f64) -> Result<f64> {
    if mean_y == 0.0 {
        return Err(Error::invalid("elasticity undefined: mean response is 0"));
    }
    Ok(beta * mean_x / mean_y)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ElasticityRow {
    pub variable: String,
    /// Design column, e.g. `Dist_CBD [5-15]`.
    pub term: String,
    pub beta: f64,
    pub mean_x: f64,
    pub mean_y: f64,
    pub elasticity: f64,
    pub stars: &'static str,
}

/// One row per built-environment coefficient. `mean_x` is the full-sample
/// mean of the raw variable (not of the segment), `mean_y` the mean
/// response of the modelling sample.
pub fn elasticity_table(fit: &LmmFit, design: &DesignMatrix, schema: &Schema) -> Result<Vec<ElasticityRow>> {
    let mean_y = mean(&design.y);
    let wald_rows = wald(fit);
    let mut out = Vec::new();
    for term in design.terms.iter().skip(1) {
        let Some(spec) = schema.get(&term.variable) else { continue };
        if spec.group() != VariableGroup::BuiltEnvironment || spec.kind != VarKind::Numeric {
            continue;
        }
        let mean_x = *design
            .raw_means
            .get(&term.variable)
            .ok_or_else(|| Error::invalid(format!("no sample mean recorded for `{}`", term.variable)))?;
        for j in term.columns.clone() {
            let w = &wald_rows[j];
            out.push(ElasticityRow {
                variable: term.variable.clone(),
                term: w.term.clone(),
                beta: w.beta,
                mean_x,
                mean_y,
                elasticity: elasticity(w.beta, mean_x, mean_y)?,
                stars: w.stars,
            });
        }
    }
    Ok(out)
}
