use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("CSV error in {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("{table}: missing column `{column}`")]
    MissingColumn { table: String, column: String },

    #[error("{table}: duplicate id `{id}`")]
    DuplicateId { table: String, id: String },

    #[error("{table}: row `{id}` references unknown {target} `{key}`")]
    DanglingReference {
        table: String,
        id: String,
        target: String,
        key: String,
    },

    #[error("invalid value in {context}: {detail}")]
    InvalidValue { context: String, detail: String },

    #[error("invalid schema: {0}")]
    Schema(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("diversity is undefined when all counts are zero")]
    UndefinedDiversity,

    #[error("trip {0} has no resolved distance")]
    UnresolvedTrip(String),

    #[error("no route between node {from} and node {to}")]
    Unreachable { from: u64, to: u64 },

    #[error("empty road graph")]
    EmptyGraph,

    #[error("degenerate polygon (zero area)")]
    DegeneratePolygon,

    #[error("R^2 undefined: observed response is constant")]
    ConstantResponse,

    #[error("model has no splits; importance is undefined")]
    NoSplits,

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("grouping is not nested: household {household} appears in more than one zone")]
    NotNested { household: usize },

    #[error("stage `{stage}` failed for wave `{wave}`: {source}")]
    Stage {
        stage: String,
        wave: String,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn csv(path: impl Into<PathBuf>, source: csv::Error) -> Self {
        Error::Csv {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    /// Wraps an error with the pipeline stage and wave it came from.
    pub fn in_stage(self, stage: &str, wave: &str) -> Self {
        Error::Stage {
            stage: stage.to_string(),
            wave: wave.to_string(),
            source: Box::new(self),
        }
    }
}
