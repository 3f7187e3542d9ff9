//! Model persistence and CSV tables.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CvTable, EnsembleModel};
use crate::{Error, Result};

/// Version tag written into every persisted model.
pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Serialize)]
struct SavedRef<'a> {
    format_version: u32,
    model: &'a EnsembleModel,
}

#[derive(Deserialize)]
struct Saved {
    format_version: u32,
    model: EnsembleModel,
}

/// Writes the model as pretty-printed JSON:
/// `{"format_version": 1, "model": {kind, trees, base_prediction, ...}}`.
pub fn save_model(model: &EnsembleModel, path: &Path) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    serde_json::to_writer_pretty(
        BufWriter::new(f),
        &SavedRef {
            format_version: MODEL_FORMAT_VERSION,
            model,
        },
    )
    .map_err(|e| Error::invalid(format!("writing {}: {e}", path.display())))
}

pub fn load_model(path: &Path) -> Result<EnsembleModel> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let saved: Saved = serde_json::from_reader(BufReader::new(f))
        .map_err(|e| Error::invalid(format!("reading {}: {e}", path.display())))?;
    if saved.format_version != MODEL_FORMAT_VERSION {
        return Err(Error::invalid(format!(
            "{}: unsupported model format version {}",
            path.display(),
            saved.format_version
        )));
    }
    Ok(saved.model)
}

/// Columns: candidate, params, mean_mse, fold_1..fold_k, best.
pub fn write_cv_table(table: &CvTable, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    let k = table.rows.first().map_or(0, |r| r.fold_mse.len());
    let mut header = vec!["candidate".to_string(), "params".into(), "mean_mse".into()];
    header.extend((1..=k).map(|f| format!("fold_{f}")));
    header.push("best".into());
    w.write_record(&header).map_err(|e| Error::csv(path, e))?;
    for (i, r) in table.rows.iter().enumerate() {
        let mut rec = vec![i.to_string(), r.params.describe(), r.mean_mse.to_string()];
        rec.extend(r.fold_mse.iter().map(f64::to_string));
        rec.push((i == table.best).to_string());
        w.write_record(&rec).map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Columns: feature, share.
pub fn write_importance(names: &[String], shares: &[f64], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    w.write_record(["feature", "share"]).map_err(|e| Error::csv(path, e))?;
    for (n, s) in names.iter().zip(shares) {
        w.write_record([n.as_str(), &s.to_string()]).map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
