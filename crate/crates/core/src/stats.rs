//! Small descriptive-statistics helpers shared across modules.

use statrs::distribution::{ContinuousCDF, Normal};

use crate::{Error, Result};

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Population variance (divisor n).
pub fn pop_variance(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64
}

/// Nearest-rank percentile: the smallest value such that at least `p`% of
/// the sample is less than or equal to it. `p` in (0, 100].
pub fn percentile_nearest_rank(xs: &[f64], p: f64) -> Result<f64> {
    if xs.is_empty() {
        return Err(Error::invalid("percentile of an empty sample"));
    }
    if !(p > 0.0 && p <= 100.0) {
        return Err(Error::invalid(format!("percentile {p} outside (0, 100]")));
    }
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(sorted[nearest_rank_index(sorted.len(), p)])
}

/// Zero-based index of the nearest-rank percentile in a sorted sample of
/// length `n`.
pub fn nearest_rank_index(n: usize, p: f64) -> usize {
    let rank = ((p / 100.0) * n as f64).ceil() as usize;
    rank.clamp(1, n) - 1
}

pub fn standard_normal_cdf(z: f64) -> f64 {
    // unit normal always constructs
    Normal::new(0.0, 1.0).unwrap().cdf(z)
}

/// Two-sided p-value of a z statistic under the standard normal.
pub fn two_sided_p(z: f64) -> f64 {
    if z.is_nan() {
        return f64::NAN;
    }
    (2.0 * standard_normal_cdf(-z.abs())).min(1.0)
}
