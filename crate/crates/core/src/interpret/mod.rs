//! Model interpretation: partial dependence, knot detection and
//! consolidation, linear-spline bases and grouped importance.

mod importance;
mod knots;
mod pdp;
mod spline;

pub use importance::{group_importance, GroupImportance};
pub use knots::{
    consolidate_knots, default_penalty, detect_knots, detect_knots_with_penalty, ConsolidateSettings,
    ConsolidatedKnot, KnotCandidate, KnotRounding, KnotSet,
};
pub use pdp::{clipped_range, compute_pdp, read_pdp_csv, write_pdp_csv, GridSpec, PdpCurve};
pub use spline::spline_basis;
