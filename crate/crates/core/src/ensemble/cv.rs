//! Train/test splitting, k-fold grid search and held-out metrics.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::{predict, Matrix, ModelParams};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

fn shuffled(n: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    idx
}

/// Shuffled split with `max(1, floor(n * test_fraction))` test rows. Both
/// index lists are returned in ascending order.
pub fn split_train_test(n: usize, test_fraction: f64, seed: u64) -> Result<Split> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::invalid(format!("test fraction {test_fraction} outside (0, 1)")));
    }
    let n_test = ((n as f64 * test_fraction).floor() as usize).max(1);
    if n_test >= n {
        return Err(Error::invalid(format!("{n} rows leave no training data at test fraction {test_fraction}")));
    }
    let idx = shuffled(n, seed);
    let mut test = idx[..n_test].to_vec();
    let mut train = idx[n_test..].to_vec();
    test.sort_unstable();
    train.sort_unstable();
    Ok(Split { train, test })
}

/// Validation folds: contiguous blocks of one seeded shuffle; the first
/// `n % k` folds hold one extra row.
pub fn kfold_indices(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(Error::invalid(format!("cross-validation needs k >= 2, got {k}")));
    }
    if k > n {
        return Err(Error::invalid(format!("{n} rows cannot form {k} folds")));
    }
    let idx = shuffled(n, seed);
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let size = n / k + usize::from(f < n % k);
        folds.push(idx[start..start + size].to_vec());
        start += size;
    }
    Ok(folds)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Metrics {
    pub rmse: f64,
    pub r2: f64,
}

/// RMSE and R^2 = 1 - SSE/SST about the mean of `y_true`.
pub fn test_metrics(y_true: &[f64], y_pred: &[f64]) -> Result<Metrics> {
    if y_true.len() != y_pred.len() {
        return Err(Error::DimensionMismatch {
            expected: y_true.len(),
            got: y_pred.len(),
        });
    }
    if y_true.len() < 2 {
        return Err(Error::invalid("metrics need at least two observations"));
    }
    let n = y_true.len() as f64;
    let sse: f64 = y_true.iter().zip(y_pred).map(|(a, b)| (a - b).powi(2)).sum();
    let m = crate::stats::mean(y_true);
    let sst: f64 = y_true.iter().map(|a| (a - m).powi(2)).sum();
    if sst == 0.0 {
        return Err(Error::ConstantResponse);
    }
    Ok(Metrics {
        rmse: (sse / n).sqrt(),
        r2: 1.0 - sse / sst,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CvRow {
    pub params: ModelParams,
    pub fold_mse: Vec<f64>,
    pub mean_mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CvTable {
    pub rows: Vec<CvRow>,
    pub best: usize,
}

impl CvTable {
    pub fn best_params(&self) -> &ModelParams {
        &self.rows[self.best].params
    }
}

fn mse(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64
}

/// Mean validation MSE of every candidate over `k` folds. The best
/// candidate has the lowest mean; ties keep the earlier candidate.
pub fn grid_search_cv(
    x: &Matrix,
    y: &[f64],
    feature_names: &[String],
    candidates: &[ModelParams],
    k: usize,
    seed: u64,
) -> Result<CvTable> {
    if candidates.is_empty() {
        return Err(Error::invalid("empty hyperparameter grid"));
    }
    let folds = kfold_indices(y.len(), k, seed)?;
    let smallest_train = y.len() - folds[0].len();
    for c in candidates {
        if smallest_train < 2 * c.min_samples_leaf() {
            return Err(Error::invalid(format!(
                "training folds of {smallest_train} rows cannot satisfy min_samples_leaf = {}",
                c.min_samples_leaf()
            )));
        }
    }
    let jobs: Vec<(usize, usize)> = (0..candidates.len()).flat_map(|c| (0..k).map(move |f| (c, f))).collect();
    let results: Vec<Result<f64>> = jobs
        .par_iter()
        .map(|&(c, f)| {
            let mut in_fold = vec![false; y.len()];
            for &i in &folds[f] {
                in_fold[i] = true;
            }
            let train: Vec<usize> = (0..y.len()).filter(|&i| !in_fold[i]).collect();
            let xt = x.select_rows(&train);
            let yt: Vec<f64> = train.iter().map(|&i| y[i]).collect();
            let model = candidates[c].fit(&xt, &yt, feature_names)?;
            let xv = x.select_rows(&folds[f]);
            let yv: Vec<f64> = folds[f].iter().map(|&i| y[i]).collect();
            Ok(mse(&yv, &predict(&model, &xv)?))
        })
        .collect();
    let mut rows = Vec::with_capacity(candidates.len());
    let mut it = results.into_iter();
    for c in candidates {
        let fold_mse: Vec<f64> = (0..k).map(|_| it.next().unwrap()).collect::<Result<_>>()?;
        let mean_mse = fold_mse.iter().sum::<f64>() / k as f64;
        rows.push(CvRow {
            params: c.clone(),
            fold_mse,
            mean_mse,
        });
    }
    let mut best = 0;
    for (i, r) in rows.iter().enumerate() {
        if r.mean_mse < rows[best].mean_mse {
            best = i;
        }
    }
    Ok(CvTable { rows, best })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_sizes() {
        let s = split_train_test(10, 0.2, 1).unwrap();
        assert_eq!(s.test.len(), 2);
        assert_eq!(s.train.len(), 8);
        assert_eq!(split_train_test(10, 0.2, 1).unwrap(), s);
        assert_eq!(split_train_test(3, 0.1, 1).unwrap().test.len(), 1);
        assert!(split_train_test(1, 0.5, 1).is_err());
        assert!(split_train_test(10, 1.0, 1).is_err());
    }

    #[test]
    fn folds_partition_rows() {
        let f = kfold_indices(11, 3, 4).unwrap();
        assert_eq!(f.iter().map(Vec::len).collect::<Vec<_>>(), vec![4, 4, 3]);
        let mut all: Vec<usize> = f.concat();
        all.sort_unstable();
        assert_eq!(all, (0..11).collect::<Vec<_>>());
        assert!(kfold_indices(5, 1, 0).is_err());
    }

    #[test]
    fn metrics_examples() {
        let m = test_metrics(&[1.0, 2.0, 3.0, 4.0], &[1.0, 2.0, 3.0, 6.0]).unwrap();
        assert!((m.rmse - 1.0).abs() < 1e-12);
        assert!((m.r2 - 0.2).abs() < 1e-12);
        let p = test_metrics(&[1.0, 3.0], &[1.0, 3.0]).unwrap();
        assert_eq!((p.rmse, p.r2), (0.0, 1.0));
        let mean = test_metrics(&[1.0, 3.0], &[2.0, 2.0]).unwrap();
        assert_eq!(mean.r2, 0.0);
        assert!(matches!(test_metrics(&[2.0, 2.0], &[1.0, 2.0]), Err(Error::ConstantResponse)));
    }
}
