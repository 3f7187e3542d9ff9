//! Partial dependence of tree-ensemble predictions on one feature.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ensemble::{EnsembleKind, EnsembleModel, Matrix, Node, Tree};
use crate::stats::{nearest_rank_index, percentile_nearest_rank};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PdpCurve {
    pub feature: String,
    pub wave: String,
    pub grid: Vec<f64>,
    pub avg_pred: Vec<f64>,
}

impl PdpCurve {
    pub fn validate(&self) -> Result<()> {
        if self.grid.len() != self.avg_pred.len() {
            return Err(Error::DimensionMismatch {
                expected: self.grid.len(),
                got: self.avg_pred.len(),
            });
        }
        if self.grid.windows(2).any(|w| !(w[0] < w[1])) || self.grid.iter().any(|g| !g.is_finite()) {
            return Err(Error::invalid(format!("PDP grid for `{}` is not strictly increasing", self.feature)));
        }
        if self.avg_pred.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("PDP for `{}` has non-finite values", self.feature)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GridSpec {
    /// Nearest-rank quantiles at `points` equally spaced percentiles from
    /// `lower` to `upper`, with duplicates removed.
    Quantiles { points: usize, lower: f64, upper: f64 },
    Explicit { values: Vec<f64> },
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec::Quantiles {
            points: 50,
            lower: 1.0,
            upper: 99.0,
        }
    }
}

impl GridSpec {
    pub fn values(&self, column: &[f64]) -> Result<Vec<f64>> {
        let mut g = match self {
            GridSpec::Quantiles { points, lower, upper } => {
                if *points < 2 || !(0.0 < *lower && lower < upper && *upper <= 100.0) {
                    return Err(Error::invalid(format!(
                        "quantile grid needs >= 2 points and 0 < lower < upper <= 100 (got {points}, {lower}, {upper})"
                    )));
                }
                if column.is_empty() {
                    return Err(Error::invalid("quantile grid of an empty column"));
                }
                let mut sorted = column.to_vec();
                sorted.sort_by(f64::total_cmp);
                (0..*points)
                    .map(|i| {
                        let p = lower + (upper - lower) * i as f64 / (*points - 1) as f64;
                        sorted[nearest_rank_index(sorted.len(), p)]
                    })
                    .collect::<Vec<f64>>()
            }
            GridSpec::Explicit { values } => {
                let mut v = values.clone();
                v.sort_by(f64::total_cmp);
                v
            }
        };
        g.dedup();
        if g.len() < 2 {
            return Err(Error::invalid("degenerate PDP grid (feature is constant over the grid range)"));
        }
        Ok(g)
    }
}

/// Sum over `rows` of the tree output with `feature` set to each grid value.
/// Splits on other features partition the rows, splits on `feature`
/// partition the grid.
fn tree_pdp_sums(tree: &Tree, x: &Matrix, feature: usize, grid: &[f64]) -> Vec<f64> {
    let mut acc = vec![0.0; grid.len()];
    let rows: Vec<usize> = (0..x.n_rows()).collect();
    let points: Vec<usize> = (0..grid.len()).collect();
    descend(tree, 0, x, feature, grid, &rows, &points, &mut acc);
    acc
}

#[allow(clippy::too_many_arguments)]
fn descend(
    tree: &Tree,
    node: usize,
    x: &Matrix,
    feature: usize,
    grid: &[f64],
    rows: &[usize],
    points: &[usize],
    acc: &mut [f64],
) {
    if rows.is_empty() || points.is_empty() {
        return;
    }
    match &tree.nodes[node] {
        Node::Leaf { value } => {
            let contrib = value * rows.len() as f64;
            for &g in points {
                acc[g] += contrib;
            }
        }
        Node::Split {
            feature: f,
            threshold,
            left,
            right,
            ..
        } => {
            if *f == feature {
                let (l, r): (Vec<usize>, Vec<usize>) = points.iter().partition(|&&g| grid[g] <= *threshold);
                descend(tree, *left, x, feature, grid, rows, &l, acc);
                descend(tree, *right, x, feature, grid, rows, &r, acc);
            } else {
                let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| x.get(i, *f) <= *threshold);
                descend(tree, *left, x, feature, grid, &l, points, acc);
                descend(tree, *right, x, feature, grid, &r, points, acc);
            }
        }
    }
}

/// Average model prediction over all rows of `x` with `feature` replaced by
/// each grid value.
pub fn compute_pdp(model: &EnsembleModel, x: &Matrix, feature: usize, grid: &GridSpec, wave: &str) -> Result<PdpCurve> {
    if feature >= model.n_features() || x.n_cols() != model.n_features() {
        return Err(Error::invalid(format!(
            "feature index {feature} invalid for a model with {} features and data with {}",
            model.n_features(),
            x.n_cols()
        )));
    }
    if x.n_rows() == 0 {
        return Err(Error::invalid("PDP over an empty sample"));
    }
    let g = grid.values(&x.column(feature))?;
    let per_tree: Vec<Vec<f64>> = model.trees.par_iter().map(|t| tree_pdp_sums(t, x, feature, &g)).collect();
    let mut total = vec![0.0; g.len()];
    for sums in &per_tree {
        for (a, s) in total.iter_mut().zip(sums) {
            *a += s;
        }
    }
    let n = x.n_rows() as f64;
    let avg_pred = match model.kind {
        EnsembleKind::Gbdt => total
            .iter()
            .map(|s| model.base_prediction.unwrap_or(0.0) + model.learning_rate * s / n)
            .collect(),
        EnsembleKind::Rf => total.iter().map(|s| s / (n * model.trees.len() as f64)).collect(),
    };
    Ok(PdpCurve {
        feature: model.feature_names[feature].clone(),
        wave: wave.to_string(),
        grid: g,
        avg_pred,
    })
}

/// Observed range of a column clipped to the given percentiles.
pub fn clipped_range(column: &[f64], lower: f64, upper: f64) -> Result<(f64, f64)> {
    Ok((percentile_nearest_rank(column, lower)?, percentile_nearest_rank(column, upper)?))
}

/// Columns: feature, wave, grid, avg_pred.
pub fn write_pdp_csv(curves: &[PdpCurve], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    w.write_record(["feature", "wave", "grid", "avg_pred"]).map_err(|e| Error::csv(path, e))?;
    for c in curves {
        for (g, v) in c.grid.iter().zip(&c.avg_pred) {
            w.write_record([c.feature.as_str(), c.wave.as_str(), &g.to_string(), &v.to_string()])
                .map_err(|e| Error::csv(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads curves written by [`write_pdp_csv`], in file order.
pub fn read_pdp_csv(path: &Path) -> Result<Vec<PdpCurve>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    let mut curves: Vec<PdpCurve> = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| Error::csv(path, e))?;
        let parse = |i: usize| -> Result<f64> {
            rec[i]
                .parse()
                .map_err(|_| Error::invalid(format!("{}: bad number `{}`", path.display(), &rec[i])))
        };
        let (g, v) = (parse(2)?, parse(3)?);
        match curves.last_mut() {
            Some(c) if c.feature == rec[0] && c.wave == rec[1] => {
                c.grid.push(g);
                c.avg_pred.push(v);
            }
            _ => curves.push(PdpCurve {
                feature: rec[0].to_string(),
                wave: rec[1].to_string(),
                grid: vec![g],
                avg_pred: vec![v],
            }),
        }
    }
    Ok(curves)
}
