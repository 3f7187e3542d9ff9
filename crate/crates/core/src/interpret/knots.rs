//! Knot (threshold) detection on partial-dependence curves and
//! cross-wave consolidation.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::pdp::PdpCurve;
use crate::stats::pop_variance;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnotCandidate {
    pub value: f64,
    /// SSE increase of the curve fit when this knot is removed.
    pub score: f64,
    pub wave: String,
}

/// Consolidated knots per variable, each list strictly increasing.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct KnotSet(BTreeMap<String, Vec<f64>>);

impl KnotSet {
    pub fn insert(&mut self, variable: &str, knots: Vec<f64>) -> Result<()> {
        if knots.iter().any(|k| !k.is_finite()) || knots.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid(format!(
                "knots for `{variable}` must be finite and strictly increasing: {knots:?}"
            )));
        }
        self.0.insert(variable.to_string(), knots);
        Ok(())
    }

    /// Knots of a variable; empty when none were set.
    pub fn get(&self, variable: &str) -> &[f64] {
        self.0.get(variable).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Vec<f64>)> {
        self.0.iter()
    }

    pub fn variables(&self) -> impl Iterator<Item = &String> {
        self.0.keys()
    }
}

/// Residual sum of squares of the continuous piecewise-linear least-squares
/// fit with knots at the given grid indices.
fn continuous_sse(x: &[f64], y: &[f64], knots: &[usize]) -> f64 {
    let n = x.len();
    let p = 2 + knots.len();
    let xm = x.iter().sum::<f64>() / n as f64;
    let design = DMatrix::from_fn(n, p, |i, j| match j {
        0 => 1.0,
        1 => x[i] - xm,
        _ => (x[i] - x[knots[j - 2]]).max(0.0),
    });
    let rhs = DVector::from_column_slice(y);
    match crate::linalg::lstsq(&design, &rhs) {
        Ok((_, sse)) => sse,
        Err(_) => f64::INFINITY,
    }
}

/// SSE of the OLS line through points `i..=j`.
fn segment_costs(x: &[f64], y: &[f64]) -> Vec<Vec<f64>> {
    let n = x.len();
    let mut cost = vec![vec![f64::INFINITY; n]; n];
    for i in 0..n {
        let (x0, y0) = (x[i], y[i]);
        let (mut sx, mut sy, mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for j in i..n {
            let (dx, dy) = (x[j] - x0, y[j] - y0);
            sx += dx;
            sy += dy;
            sxx += dx * dx;
            sxy += dx * dy;
            syy += dy * dy;
            let m = (j - i + 1) as f64;
            if j > i {
                let vxx = sxx - sx * sx / m;
                let vxy = sxy - sx * sy / m;
                let vyy = syy - sy * sy / m;
                cost[i][j] = (vyy - if vxx > 0.0 { vxy * vxy / vxx } else { 0.0 }).max(0.0);
            }
        }
    }
    cost
}

/// Optimal discontinuous segmentations (segment neighbourhood dynamic
/// program) for 0..=max_breaks breaks. Each segment has at least two
/// points. Returns, per break count, the start index of every segment
/// after the first.
fn segment_neighbourhood(cost: &[Vec<f64>], max_breaks: usize) -> Vec<Option<Vec<usize>>> {
    let n = cost.len();
    // best[m][j]: min cost of points 0..=j split into m + 1 segments
    let mut best = vec![vec![f64::INFINITY; n]; max_breaks + 1];
    let mut arg = vec![vec![usize::MAX; n]; max_breaks + 1];
    for j in 1..n {
        best[0][j] = cost[0][j];
    }
    for m in 1..=max_breaks {
        for j in (2 * m + 1)..n {
            for s in (2 * m)..=(j - 1) {
                let c = best[m - 1][s - 1] + cost[s][j];
                if c < best[m][j] {
                    best[m][j] = c;
                    arg[m][j] = s;
                }
            }
        }
    }
    (0..=max_breaks)
        .map(|m| {
            if !best[m][n - 1].is_finite() {
                return None;
            }
            let mut starts = Vec::with_capacity(m);
            let mut j = n - 1;
            for mm in (1..=m).rev() {
                let s = arg[mm][j];
                starts.push(s);
                j = s - 1;
            }
            starts.reverse();
            Some(starts)
        })
        .collect()
}

/// Moves each knot over the grid points between its neighbours while the
/// continuous-fit SSE improves.
fn refine_continuous(x: &[f64], y: &[f64], mut knots: Vec<usize>) -> (Vec<usize>, f64) {
    let n = x.len();
    let mut sse = continuous_sse(x, y, &knots);
    for _ in 0..100 {
        let mut improved = false;
        for k in 0..knots.len() {
            let lo = if k == 0 { 1 } else { knots[k - 1] + 1 };
            let hi = if k + 1 == knots.len() { n - 2 } else { knots[k + 1] - 1 };
            for pos in lo..=hi {
                if pos == knots[k] {
                    continue;
                }
                let mut trial = knots.clone();
                trial[k] = pos;
                let s = continuous_sse(x, y, &trial);
                if s < sse * (1.0 - 1e-12) - 1e-300 {
                    sse = s;
                    knots = trial;
                    improved = true;
                }
            }
        }
        if !improved {
            break;
        }
    }
    (knots, sse)
}

/// Default knot penalty: `ln(points) * var(avg_pred)`.
pub fn default_penalty(curve: &PdpCurve) -> f64 {
    (curve.grid.len() as f64).ln() * pop_variance(&curve.avg_pred)
}

/// Detects up to `max_knots` knots on a curve with the default penalty.
pub fn detect_knots(curve: &PdpCurve, max_knots: usize) -> Result<Vec<KnotCandidate>> {
    detect_knots_with_penalty(curve, max_knots, default_penalty(curve))
}

/// Continuous piecewise-linear least-squares segmentation of a curve.
/// Breakpoint candidates are the interior grid points; the segment
/// neighbourhood dynamic program proposes a segmentation per knot count,
/// which is then refined under the continuity constraint. The knot count
/// minimizes `SSE + count * penalty` (ties go to fewer knots).
pub fn detect_knots_with_penalty(curve: &PdpCurve, max_knots: usize, penalty: f64) -> Result<Vec<KnotCandidate>> {
    curve.validate()?;
    let n = curve.grid.len();
    if n < 2 * (max_knots + 1) {
        return Err(Error::invalid(format!(
            "curve for `{}` has {n} points; {max_knots} knots need at least {}",
            curve.feature,
            2 * (max_knots + 1)
        )));
    }
    let x = &curve.grid;
    let ym = crate::stats::mean(&curve.avg_pred);
    let y: Vec<f64> = curve.avg_pred.iter().map(|v| v - ym).collect();

    let cost = segment_costs(x, &y);
    let proposals = segment_neighbourhood(&cost, max_knots);

    let mut best_knots: Vec<usize> = Vec::new();
    let mut best_sse = continuous_sse(x, &y, &[]);
    let mut best_crit = best_sse;
    for (m, starts) in proposals.into_iter().enumerate().skip(1) {
        let Some(starts) = starts else { continue };
        // a break between points s-1 and s becomes a knot at s-1 (clamped
        // to the interior); refinement settles the exact grid point
        let mut init: Vec<usize> = starts.iter().map(|&s| (s - 1).clamp(1, n - 2)).collect();
        init.dedup();
        if init.len() != m {
            continue;
        }
        let (knots, sse) = refine_continuous(x, &y, init);
        let crit = sse + m as f64 * penalty;
        if crit < best_crit {
            best_crit = crit;
            best_knots = knots;
            best_sse = sse;
        }
    }

    Ok(best_knots
        .iter()
        .enumerate()
        .map(|(k, &idx)| {
            let mut without = best_knots.clone();
            without.remove(k);
            let score = (continuous_sse(x, &y, &without) - best_sse).max(0.0);
            KnotCandidate {
                value: x[idx],
                score,
                wave: curve.wave.clone(),
            }
        })
        .collect())
}

/// Rounding applied to consolidated knots.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KnotRounding {
    None,
    /// Round to a multiple of `10^(floor(log10(range)) - digits)`, e.g. to
    /// whole miles for a 0-30 mile range with `digits = 1`.
    RangeDigits { digits: i32 },
}

impl KnotRounding {
    fn apply(&self, v: f64, range: f64) -> f64 {
        match *self {
            KnotRounding::None => v,
            KnotRounding::RangeDigits { digits } => {
                if range <= 0.0 {
                    return v;
                }
                let exp = range.log10().floor() as i32 - digits;
                let unit = 10f64.powi(exp);
                let r = (v / unit).round() * unit;
                // trim representation noise, e.g. 0.30000000000000004
                if exp < 0 {
                    let places = (-exp) as usize;
                    format!("{r:.places$}").parse().unwrap_or(r)
                } else {
                    r
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConsolidateSettings {
    pub rel_tol: f64,
    pub rounding: KnotRounding,
}

impl Default for ConsolidateSettings {
    fn default() -> Self {
        ConsolidateSettings {
            rel_tol: 0.15,
            rounding: KnotRounding::RangeDigits { digits: 1 },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConsolidatedKnot {
    pub value: f64,
    pub score: f64,
    /// Number of candidates merged into this knot.
    pub support: usize,
}

/// Merges candidates from all waves for one variable. Candidates whose
/// sorted gaps are within `rel_tol * (hi - lo)` chain into one cluster,
/// placed at the score-weighted mean and rounded. Knots that round onto or
/// outside the pooled range `(lo, hi)` are discarded.
pub fn consolidate_knots(
    per_wave: &BTreeMap<String, Vec<KnotCandidate>>,
    range: (f64, f64),
    settings: &ConsolidateSettings,
) -> Vec<ConsolidatedKnot> {
    let (lo, hi) = range;
    let width = hi - lo;
    let mut all: Vec<&KnotCandidate> = per_wave.values().flatten().collect();
    all.sort_by(|a, b| a.value.total_cmp(&b.value).then_with(|| a.wave.cmp(&b.wave)));

    let mut clusters: Vec<Vec<&KnotCandidate>> = Vec::new();
    for c in all {
        match clusters.last_mut() {
            Some(cl) if c.value - cl.last().unwrap().value <= settings.rel_tol * width => cl.push(c),
            _ => clusters.push(vec![c]),
        }
    }

    let mut out: Vec<ConsolidatedKnot> = Vec::new();
    for cl in clusters {
        let total: f64 = cl.iter().map(|c| c.score).sum();
        let center = if total > 0.0 {
            cl.iter().map(|c| c.score * c.value).sum::<f64>() / total
        } else {
            cl.iter().map(|c| c.value).sum::<f64>() / cl.len() as f64
        };
        let value = settings.rounding.apply(center, width);
        if !(value > lo && value < hi) {
            continue;
        }
        match out.last_mut() {
            Some(prev) if prev.value == value => {
                prev.score += total;
                prev.support += cl.len();
            }
            _ => out.push(ConsolidatedKnot {
                value,
                score: total,
                support: cl.len(),
            }),
        }
    }
    out
}
