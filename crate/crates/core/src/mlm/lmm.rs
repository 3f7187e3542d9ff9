//! Three-level random-intercept linear mixed model fitted by profiled
//! (restricted) maximum likelihood.
//!
//! With `V = sigma^2 * (I + g_h * Z_h Z_h' + g_z * Z_z Z_z')`, the inverse and
//! log-determinant of the bracketed matrix are swept out household by
//! household and zone by zone, so one likelihood evaluation costs
//! O((households + zones) * p^2) after an O(n * p^2) setup.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::optimize::{nelder_mead, newton_polish};
use crate::dataset::DesignMatrix;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    #[default]
    Ml,
    Reml,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Ml => "ML",
            Method::Reml => "REML",
        }
    }
}

/// Which random-intercept levels enter the model. The response and fixed
/// terms come from the design matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LmmSpec {
    pub method: Method,
    pub household_level: bool,
    pub zone_level: bool,
}

impl Default for LmmSpec {
    fn default() -> Self {
        LmmSpec {
            method: Method::Ml,
            household_level: true,
            zone_level: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceComponents {
    pub sd_resid: f64,
    pub sd_hh: f64,
    pub sd_zone: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct OptimizerTrace {
    pub starts: usize,
    pub iterations: usize,
    pub evaluations: usize,
    pub polish_steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmmFit {
    pub columns: Vec<String>,
    pub beta: Vec<f64>,
    pub se: Vec<f64>,
    /// Row-major covariance of `beta`.
    pub cov_beta: Vec<f64>,
    pub varcomps: VarianceComponents,
    /// Household and zone variances relative to the residual variance.
    pub ratio_hh: f64,
    pub ratio_zone: f64,
    pub loglik: f64,
    pub n_obs: usize,
    pub k_params: usize,
    pub method: Method,
    pub converged: bool,
    pub trace: OptimizerTrace,
    pub warnings: Vec<String>,
}

/// Ratios below this are reported as exactly zero.
pub const BOUNDARY_RATIO: f64 = 1e-8;
const LOG_RATIO_BOUNDS: (f64, f64) = (-30.0, 15.0);
const FTOL: f64 = 1e-9;
const MAX_ITER: usize = 10_000;

/// Sufficient statistics of `[X y]` by household.
struct Sweep {
    q: usize,
    n: usize,
    hh_size: Vec<f64>,
    /// Row-major `households x q` column sums.
    hh_sum: Vec<f64>,
    zone_households: Vec<Vec<usize>>,
    /// Upper-triangle-complete `q x q` cross-product matrix.
    gram: Vec<f64>,
}

pub(crate) struct Evaluation {
    pub loglik: f64,
    pub beta: DVector<f64>,
    pub xtvx_inv: DMatrix<f64>,
    pub sigma2: f64,
}

impl Sweep {
    fn new(d: &DesignMatrix) -> Self {
        let p = d.n_cols();
        let q = p + 1;
        let n = d.n_rows();
        let mut hh_size = vec![0.0; d.n_households];
        let mut hh_sum = vec![0.0; d.n_households * q];
        let mut gram = vec![0.0; q * q];
        let mut row = vec![0.0; q];
        let mut hh_zone = vec![0usize; d.n_households];
        for i in 0..n {
            row[..p].copy_from_slice(d.row(i));
            row[p] = d.y[i];
            let h = d.hh_index[i];
            hh_zone[h] = d.zone_index[i];
            hh_size[h] += 1.0;
            for a in 0..q {
                hh_sum[h * q + a] += row[a];
                let ra = row[a];
                for b in a..q {
                    gram[a * q + b] += ra * row[b];
                }
            }
        }
        let mut zone_households = vec![Vec::new(); d.n_zones];
        for (h, z) in hh_zone.iter().enumerate() {
            zone_households[*z].push(h);
        }
        Sweep {
            q,
            n,
            hh_size,
            hh_sum,
            zone_households,
            gram,
        }
    }

    /// Profiled log-likelihood at variance ratios `(g_h, g_z)`.
    fn evaluate(&self, g_h: f64, g_z: f64, method: Method) -> Result<Evaluation> {
        let q = self.q;
        let p = q - 1;
        let mut m = self.gram.clone();
        let mut logdet_v = 0.0;
        let mut t = vec![0.0; q];
        for hs in &self.zone_households {
            t.fill(0.0);
            let mut s_z = 0.0;
            for &h in hs {
                let nh = self.hh_size[h];
                let s = &self.hh_sum[h * q..(h + 1) * q];
                let denom = 1.0 + g_h * nh;
                if g_h > 0.0 {
                    logdet_v += denom.ln();
                    let c = g_h / denom;
                    for a in 0..q {
                        let ca = c * s[a];
                        for b in a..q {
                            m[a * q + b] -= ca * s[b];
                        }
                    }
                }
                s_z += nh / denom;
                for a in 0..q {
                    t[a] += s[a] / denom;
                }
            }
            if g_z > 0.0 {
                let denom = 1.0 + g_z * s_z;
                logdet_v += denom.ln();
                let dz = g_z / denom;
                for a in 0..q {
                    let da = dz * t[a];
                    for b in a..q {
                        m[a * q + b] -= da * t[b];
                    }
                }
            }
        }
        let mxx = DMatrix::from_fn(p, p, |a, b| if a <= b { m[a * q + b] } else { m[b * q + a] });
        let mxy = DVector::from_fn(p, |a, _| m[a * q + p]);
        let myy = m[p * q + p];
        let chol = mxx
            .cholesky()
            .ok_or_else(|| Error::Singular("fixed-effects cross-product X'V^-1X".into()))?;
        let beta = chol.solve(&mxy);
        let r = myy - mxy.dot(&beta);
        let logdet_xtvx: f64 = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let n = self.n as f64;
        let two_pi = 2.0 * std::f64::consts::PI;
        let (sigma2, loglik) = match method {
            Method::Ml => {
                let s2 = r / n;
                (s2, -0.5 * n * (two_pi.ln() + s2.ln() + 1.0) - 0.5 * logdet_v)
            }
            Method::Reml => {
                let df = n - p as f64;
                let s2 = r / df;
                (s2, -0.5 * df * (1.0 + (two_pi * s2).ln()) - 0.5 * logdet_v - 0.5 * logdet_xtvx)
            }
        };
        if !(sigma2 > 0.0) {
            return Err(Error::Singular("residual variance is zero (perfect fit)".into()));
        }
        Ok(Evaluation {
            loglik,
            beta,
            xtvx_inv: chol.inverse(),
            sigma2,
        })
    }
}

/// Profiled log-likelihood of a design at fixed variance ratios; exposed for
/// grid-based checks.
pub fn profiled_loglik(design: &DesignMatrix, ratio_hh: f64, ratio_zone: f64, method: Method) -> Result<f64> {
    Ok(Sweep::new(design).evaluate(ratio_hh, ratio_zone, method)?.loglik)
}

struct Search<'a> {
    sweep: &'a Sweep,
    method: Method,
    trace: OptimizerTrace,
    converged: bool,
}

impl Search<'_> {
    fn ratios(theta: &[f64], free: &[usize]) -> [f64; 2] {
        let mut g = [0.0; 2];
        for (k, &lvl) in free.iter().enumerate() {
            g[lvl] = theta[k].exp();
        }
        g
    }

    /// Best ratios with only the `free` levels (0 = household, 1 = zone)
    /// allowed nonzero.
    fn optimize(&mut self, free: &[usize]) -> ([f64; 2], f64) {
        let sweep = self.sweep;
        let method = self.method;
        if free.is_empty() {
            let ll = sweep.evaluate(0.0, 0.0, method).map_or(f64::NEG_INFINITY, |e| e.loglik);
            return ([0.0; 2], ll);
        }
        let mut cost = |theta: &[f64]| {
            let g = Self::ratios(theta, free);
            sweep.evaluate(g[0], g[1], method).map_or(f64::INFINITY, |e| -e.loglik)
        };
        let starts: Vec<Vec<f64>> = if free.len() == 2 {
            vec![vec![-0.7, -0.7], vec![-3.0, -3.0], vec![1.0, 1.0], vec![-3.0, 1.0], vec![1.0, -3.0]]
        } else {
            vec![vec![-0.7], vec![-3.0], vec![1.0], vec![-6.0], vec![3.0]]
        };
        let mut best: Option<(Vec<f64>, f64, bool)> = None;
        for s in &starts {
            let o = nelder_mead(&mut cost, s, 1.0, LOG_RATIO_BOUNDS, FTOL, MAX_ITER);
            self.trace.starts += 1;
            self.trace.iterations += o.iterations;
            self.trace.evaluations += o.evaluations;
            if best.as_ref().is_none_or(|b| o.fx < b.1) {
                best = Some((o.x, o.fx, o.converged));
            }
        }
        let (x, fx, conv) = best.expect("at least one start");
        self.converged &= conv;
        let active: Vec<usize> = (0..x.len())
            .filter(|&k| x[k] > LOG_RATIO_BOUNDS.0 + 1.0 && x[k] < LOG_RATIO_BOUNDS.1 - 1.0)
            .collect();
        let (x, fx, steps) = newton_polish(&mut cost, &x, fx, &active, LOG_RATIO_BOUNDS, &mut self.trace.evaluations);
        self.trace.polish_steps += steps;
        (Self::ratios(&x, free), -fx)
    }
}

/// Fits the random-intercept model by maximizing the profiled (restricted)
/// likelihood over the two log variance ratios. Candidate solutions with a
/// ratio near zero are compared against refits with that level removed, so
/// boundary optima are found exactly; ratios below [`BOUNDARY_RATIO`] are
/// reported as zero.
pub fn fit_lmm(design: &DesignMatrix, spec: &LmmSpec) -> Result<LmmFit> {
    design.check_nesting()?;
    let n = design.n_rows();
    let p = design.n_cols();
    if n <= p + 3 {
        return Err(Error::invalid(format!("{n} observations are too few for {p} fixed effects plus 3 variance parameters")));
    }
    if design.y.iter().chain(&design.x).any(|v| !v.is_finite()) {
        return Err(Error::invalid("design contains non-finite values"));
    }
    let sweep = Sweep::new(design);
    // rank check at the OLS point
    sweep.evaluate(0.0, 0.0, spec.method).map_err(|e| match e {
        Error::Singular(_) => Error::Singular("fixed-effects matrix X'X is singular".into()),
        other => other,
    })?;

    let mut warnings = Vec::new();
    let mut free: Vec<usize> = Vec::new();
    if spec.household_level {
        if sweep.hh_size.iter().all(|&s| s == 1.0) {
            let msg = "every household has exactly one person: household and residual variance are not separately identifiable; household variance fixed at 0".to_string();
            log::warn!("{msg}");
            warnings.push(msg);
        } else {
            free.push(0);
        }
    }
    if spec.zone_level {
        let single = if spec.household_level {
            sweep.zone_households.iter().all(|hs| hs.len() == 1)
        } else {
            sweep.zone_households.iter().all(|hs| hs.iter().map(|&h| sweep.hh_size[h]).sum::<f64>() == 1.0)
        };
        if single {
            let msg = "every zone has a single lower-level unit: zone variance is not separately identifiable; zone variance fixed at 0".to_string();
            log::warn!("{msg}");
            warnings.push(msg);
        } else {
            free.push(1);
        }
    }

    let mut search = Search {
        sweep: &sweep,
        method: spec.method,
        trace: OptimizerTrace::default(),
        converged: true,
    };
    let (mut ratios, mut best_ll) = search.optimize(&free);
    for &lvl in &free {
        if ratios[lvl] < 1e-2 {
            let reduced: Vec<usize> = free.iter().copied().filter(|&l| l != lvl).collect();
            let (r2, ll2) = search.optimize(&reduced);
            if ll2 >= best_ll {
                ratios = r2;
                best_ll = ll2;
            }
        }
    }
    if let Ok(e) = sweep.evaluate(0.0, 0.0, spec.method) {
        if e.loglik > best_ll {
            ratios = [0.0, 0.0];
        }
    }
    for r in ratios.iter_mut() {
        if *r < BOUNDARY_RATIO {
            *r = 0.0;
        }
    }
    let e = sweep.evaluate(ratios[0], ratios[1], spec.method)?;
    for (lvl, name) in [(0, "household"), (1, "zone")] {
        if free.contains(&lvl) && ratios[lvl] == 0.0 {
            warnings.push(format!("{name} variance estimated on the boundary (0)"));
        }
    }
    let cov = e.xtvx_inv.scale(e.sigma2);
    let se: Vec<f64> = (0..p).map(|j| cov[(j, j)].max(0.0).sqrt()).collect();
    let cov_beta = (0..p).flat_map(|i| (0..p).map(move |j| (i, j))).map(|(i, j)| cov[(i, j)]).collect();
    Ok(LmmFit {
        columns: design.columns.clone(),
        beta: e.beta.iter().copied().collect(),
        se,
        cov_beta,
        varcomps: VarianceComponents {
            sd_resid: e.sigma2.sqrt(),
            sd_hh: (ratios[0] * e.sigma2).sqrt(),
            sd_zone: (ratios[1] * e.sigma2).sqrt(),
        },
        ratio_hh: ratios[0],
        ratio_zone: ratios[1],
        loglik: e.loglik,
        n_obs: n,
        k_params: p + 3,
        method: spec.method,
        converged: search.converged,
        trace: search.trace,
        warnings,
    })
}
