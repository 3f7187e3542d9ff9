//! Detecting non-linear and threshold effects of explanatory variables on a
//! continuous travel outcome.
//!
//! The crate chains five stages:
//!
//! - [`dataset`]: hierarchical (person / household / zone) survey tables,
//!   cleaning, VIF screening and design-matrix construction.
//! - [`derive`]: derived variables (entropy diversity, daily VMT, distances).
//! - [`ensemble`]: gradient boosting and random forest regressors, grid
//!   search with k-fold cross-validation, test metrics and importance.
//! - [`interpret`]: partial dependence, knot detection and consolidation,
//!   linear-spline bases.
//! - [`mlm`]: three-level random-intercept linear mixed models, Wald
//!   inference, fit statistics, stepwise building and elasticities.
//!
//! [`synth`] generates data with known ground truth and [`pipeline`] wires
//! everything behind a config-driven CLI.

pub mod dataset;
pub mod derive;
pub mod ensemble;
pub mod error;
pub mod interpret;
pub mod linalg;
pub mod mlm;
pub mod pipeline;
pub mod stats;
pub mod synth;

pub use error::{Error, Result};
