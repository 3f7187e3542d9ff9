//! CSV tables of fitted models.

use std::path::Path;

use super::inference::{wald, ElasticityRow};
use super::stepwise::{DropEvent, StepModel};
use crate::{Error, Result};

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))
}

fn finish(mut w: csv::Writer<std::fs::File>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

/// Coefficients and random-effect SDs. Columns: wave, model, term, beta,
/// se, z, p, stars.
pub fn write_coefficients(rows: &[(String, &StepModel)], path: &Path) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["wave", "model", "term", "beta", "se", "z", "p", "stars"])
        .map_err(|e| Error::csv(path, e))?;
    for (wave, m) in rows {
        for r in wald(&m.fit) {
            w.write_record([
                wave.as_str(),
                &m.name,
                &r.term,
                &r.beta.to_string(),
                &r.se.to_string(),
                &r.z.to_string(),
                &r.p.to_string(),
                r.stars,
            ])
            .map_err(|e| Error::csv(path, e))?;
        }
        let vc = m.fit.varcomps;
        for (term, sd) in [("SD zone", vc.sd_zone), ("SD household", vc.sd_hh), ("SD residual", vc.sd_resid)] {
            w.write_record([wave.as_str(), &m.name, term, &sd.to_string(), "", "", "", ""])
                .map_err(|e| Error::csv(path, e))?;
        }
    }
    finish(w, path)
}

/// Columns: wave, model, n_obs, k_params, loglik, aic, bic, r2_marginal,
/// r2_conditional, sd_resid, sd_hh, sd_zone, converged.
pub fn write_fit_stats(rows: &[(String, &StepModel)], path: &Path) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record([
        "wave",
        "model",
        "n_obs",
        "k_params",
        "loglik",
        "aic",
        "bic",
        "r2_marginal",
        "r2_conditional",
        "sd_resid",
        "sd_hh",
        "sd_zone",
        "converged",
    ])
    .map_err(|e| Error::csv(path, e))?;
    for (wave, m) in rows {
        let s = &m.stats;
        let vc = m.fit.varcomps;
        w.write_record([
            wave.clone(),
            m.name.clone(),
            m.fit.n_obs.to_string(),
            m.fit.k_params.to_string(),
            s.loglik.to_string(),
            s.aic.to_string(),
            s.bic.to_string(),
            s.r2_marginal.to_string(),
            s.r2_conditional.to_string(),
            vc.sd_resid.to_string(),
            vc.sd_hh.to_string(),
            vc.sd_zone.to_string(),
            m.fit.converged.to_string(),
        ])
        .map_err(|e| Error::csv(path, e))?;
    }
    finish(w, path)
}

/// Columns: wave, variable, term, beta, mean_x, mean_y, elasticity, stars.
pub fn write_elasticities(rows: &[(String, Vec<ElasticityRow>)], path: &Path) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["wave", "variable", "term", "beta", "mean_x", "mean_y", "elasticity", "stars"])
        .map_err(|e| Error::csv(path, e))?;
    for (wave, table) in rows {
        for r in table {
            w.write_record([
                wave.as_str(),
                &r.variable,
                &r.term,
                &r.beta.to_string(),
                &r.mean_x.to_string(),
                &r.mean_y.to_string(),
                &r.elasticity.to_string(),
                r.stars,
            ])
            .map_err(|e| Error::csv(path, e))?;
        }
    }
    finish(w, path)
}

/// Columns: wave, model, variable, p.
pub fn write_drop_trace(rows: &[(String, &[DropEvent])], path: &Path) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["wave", "model", "variable", "p"]).map_err(|e| Error::csv(path, e))?;
    for (wave, events) in rows {
        for e in events.iter() {
            w.write_record([wave.as_str(), &e.model, &e.variable, &e.p.to_string()])
                .map_err(|e| Error::csv(path, e))?;
        }
    }
    finish(w, path)
}
