//! Feature matrices for the tree ensembles.

use crate::dataset::{HierarchicalWave, VarKind};
use crate::ensemble::Matrix;
use crate::{Error, Result};

/// One column per listed variable resolved to person level: numeric values
/// as-is, categorical variables as their category index (trees only need
/// an ordering). Returns the matrix, column names and the response.
pub fn feature_matrix(wave: &HierarchicalWave, variables: &[String]) -> Result<(Matrix, Vec<String>, Vec<f64>)> {
    let n = wave.persons.len();
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(variables.len());
    for name in variables {
        let spec = wave
            .schema
            .get(name)
            .ok_or_else(|| Error::invalid(format!("unknown variable `{name}`")))?;
        let missing = || Error::invalid(format!("`{name}` has missing values; clean first"));
        let col = match spec.kind {
            VarKind::Numeric => wave
                .person_numeric(name)?
                .into_iter()
                .map(|v| v.ok_or_else(missing))
                .collect::<Result<Vec<f64>>>()?,
            VarKind::Categorical => wave
                .person_categorical(name)?
                .into_iter()
                .map(|v| v.map(|c| c as f64).ok_or_else(missing))
                .collect::<Result<Vec<f64>>>()?,
        };
        cols.push(col);
    }
    let y = wave
        .response
        .iter()
        .map(|v| v.ok_or_else(|| Error::invalid("missing response; clean first")))
        .collect::<Result<Vec<f64>>>()?;
    let p = cols.len();
    let mut data = Vec::with_capacity(n * p);
    for i in 0..n {
        for c in &cols {
            data.push(c[i]);
        }
    }
    Ok((Matrix::new(n, p, data)?, variables.to_vec(), y))
}
