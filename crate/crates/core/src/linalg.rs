//! Dense least-squares helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

/// Builds a column-major nalgebra matrix from row-major data.
pub fn from_row_major(rows: usize, cols: usize, data: &[f64]) -> DMatrix<f64> {
    DMatrix::from_row_slice(rows, cols, data)
}

/// Least-squares fit via SVD; tolerates rank deficiency (minimum-norm
/// solution). Returns (coefficients, residual sum of squares).
pub fn lstsq(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<(DVector<f64>, f64)> {
    let svd = x.clone().svd(true, true);
    let max_sv = svd.singular_values.max();
    let eps = max_sv * 1e-12 * (x.nrows().max(x.ncols()) as f64);
    let beta = svd
        .solve(y, eps)
        .map_err(|e| Error::Singular(e.to_string()))?;
    let resid = y - x * &beta;
    Ok((beta, resid.norm_squared()))
}

/// Cholesky factor of a symmetric positive-definite matrix, or a
/// `Singular` error naming `what`.
pub fn cholesky(a: DMatrix<f64>, what: &str) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    a.cholesky()
        .ok_or_else(|| Error::Singular(format!("{what} is not positive definite")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lstsq_recovers_exact_line() {
        let x = from_row_major(4, 2, &[1.0, 0.0, 1.0, 1.0, 1.0, 2.0, 1.0, 3.0]);
        let y = DVector::from_vec(vec![1.0, 3.0, 5.0, 7.0]);
        let (b, rss) = lstsq(&x, &y).unwrap();
        assert!((b[0] - 1.0).abs() < 1e-12 && (b[1] - 2.0).abs() < 1e-12);
        assert!(rss < 1e-20);
    }
}
