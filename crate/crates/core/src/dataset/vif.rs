use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::linalg::lstsq;
use crate::{Error, Result};

/// Advisory bar above which multicollinearity is flagged.
pub const VIF_THRESHOLD: f64 = 5.0;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VifRow {
    pub variable: String,
    /// `f64::INFINITY` marks exact collinearity.
    pub vif: f64,
}

/// Variance inflation factors of the columns of a row-major `n x p` matrix
/// (no intercept column; one is added to every auxiliary regression).
pub fn compute_vif(names: &[String], x: &[f64], n: usize) -> Result<Vec<VifRow>> {
    let p = names.len();
    if p < 2 {
        return Err(Error::invalid("VIF needs at least two non-intercept columns"));
    }
    if x.len() != n * p {
        return Err(Error::DimensionMismatch {
            expected: n * p,
            got: x.len(),
        });
    }
    if n < p {
        return Err(Error::invalid(format!("VIF needs rows >= columns ({n} < {p})")));
    }
    let mut rows = Vec::with_capacity(p);
    for j in 0..p {
        let y = DVector::from_iterator(n, (0..n).map(|i| x[i * p + j]));
        let others = DMatrix::from_fn(n, p, |i, c| {
            if c == 0 {
                1.0
            } else {
                let k = if c <= j { c - 1 } else { c };
                x[i * p + k]
            }
        });
        let (_, sse) = lstsq(&others, &y)?;
        let ym = y.mean();
        let sst: f64 = y.iter().map(|v| (v - ym) * (v - ym)).sum();
        let vif = if sst <= 0.0 {
            f64::INFINITY
        } else {
            let unexplained = sse / sst;
            if unexplained < 1e-10 {
                f64::INFINITY
            } else {
                1.0 / unexplained
            }
        };
        if vif > VIF_THRESHOLD {
            log::warn!("VIF for {} is {vif:.2} (> {VIF_THRESHOLD})", names[j]);
        }
        rows.push(VifRow {
            variable: names[j].clone(),
            vif,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(p: usize) -> Vec<String> {
        (0..p).map(|j| format!("x{j}")).collect()
    }

    #[test]
    fn orthogonal_columns_have_unit_vif() {
        // centered, orthogonal
        let x = [1.0, 1.0, 1.0, -1.0, -1.0, 1.0, -1.0, -1.0];
        let v = compute_vif(&names(2), &x, 4).unwrap();
        assert!((v[0].vif - 1.0).abs() < 1e-12);
        assert!((v[1].vif - 1.0).abs() < 1e-12);
    }

    #[test]
    fn duplicated_column_is_infinite() {
        let x = [1.0, 1.0, 2.0, 2.0, 4.0, 4.0, 3.0, 3.0, 7.0, 7.0];
        let v = compute_vif(&names(2), &x, 5).unwrap();
        assert!(v.iter().all(|r| r.vif.is_infinite()));
    }

    #[test]
    fn too_few_columns_is_an_error() {
        assert!(compute_vif(&names(1), &[1.0, 2.0], 2).is_err());
    }
}
