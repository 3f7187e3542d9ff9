//! Hierarchical survey waves: loading, cleaning, encoding and VIF screening.

mod clean;
mod design;
mod schema;
mod vif;
mod wave;

pub use clean::{clean, CleanEntry, CleanLog, CleanPolicy, MissingAction, OutlierAction};
pub use design::{build_design, segment_labels, DesignMatrix, DesignTerm, TermSpec, INTERCEPT};
pub use schema::{Level, Schema, VarKind, VariableGroup, VariableSpec, HOUSEHOLD_ID, PERSON_ID, ZONE_ID};
pub use vif::{compute_vif, VifRow, VIF_THRESHOLD};
pub use wave::{load_wave, load_wave_with_derived, write_wave, Column, HierarchicalWave, Table, ZoneCounts, ZONE_COUNT_COLUMNS};
