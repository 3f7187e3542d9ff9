//! Three-level random-intercept mixed models: fitting, inference, fit
//! statistics, the stepwise procedure and elasticities.

mod inference;
mod io;
mod lmm;
mod optimize;
mod stepwise;

pub use inference::{
    elasticity, elasticity_table, fit_stats, information_criteria, nakagawa_r2, r2_from_components, stars, wald,
    wald_test, ElasticityRow, FitStats, WaldRow,
};
pub use io::{write_coefficients, write_drop_trace, write_elasticities, write_fit_stats};
pub use lmm::{
    fit_lmm, profiled_loglik, LmmFit, LmmSpec, Method, OptimizerTrace, VarianceComponents, BOUNDARY_RATIO,
};
pub use stepwise::{fit_with_drops, stepwise_build, DropEvent, StepModel, StepwiseConfig, StepwiseResult, MODEL_NAMES};
