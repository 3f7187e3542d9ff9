use std::collections::BTreeMap;

use serde::Serialize;

use crate::{Error, Result};

/// Importance share per variable group; shares sum to 1.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupImportance(pub BTreeMap<String, f64>);

impl GroupImportance {
    pub fn get(&self, group: &str) -> f64 {
        self.0.get(group).copied().unwrap_or(0.0)
    }
}

/// Sums per-feature shares into their groups.
pub fn group_importance(
    features: &[String],
    shares: &[f64],
    grouping: &BTreeMap<String, String>,
) -> Result<GroupImportance> {
    if features.len() != shares.len() {
        return Err(Error::DimensionMismatch {
            expected: features.len(),
            got: shares.len(),
        });
    }
    let total: f64 = shares.iter().sum();
    if (total - 1.0).abs() > 1e-9 || shares.iter().any(|s| *s < 0.0) {
        return Err(Error::invalid(format!("importance shares must be >= 0 and sum to 1 (sum {total})")));
    }
    let mut out = BTreeMap::new();
    for (f, s) in features.iter().zip(shares) {
        let g = grouping
            .get(f)
            .ok_or_else(|| Error::invalid(format!("feature `{f}` has no group")))?;
        *out.entry(g.clone()).or_insert(0.0) += s;
    }
    Ok(GroupImportance(out))
}
