use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("validation error at row {row}: {message}")]
    Validation { row: usize, message: String },

    #[error("degenerate split: {0}")]
    DegenerateSplit(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("batch size {got} too small for {mode} mode (need at least {need})")]
    BatchSize {
        got: usize,
        need: usize,
        mode: &'static str,
    },

    #[error("shape error: {0}")]
    Shape(String),

    #[error("state error: {0}")]
    State(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("artifact error: {0}")]
    Artifact(String),

    #[error("architecture error: {0}")]
    Architecture(String),

    #[error("undefined metric {metric}: {reason}")]
    UndefinedMetric {
        metric: &'static str,
        reason: String,
    },

    #[error("AUC gap undefined: {0}")]
    GapUndefined(String),

    #[error("threshold error: {0}")]
    Threshold(String),

    #[error("equalized odds undefined for group {group}: {reason}")]
    EoUndefined { group: String, reason: String },

    #[error("singular design matrix (offending columns: {columns:?})")]
    SingularDesign { columns: Vec<String> },

    #[error("degenerate weights: {0}")]
    DegenerateWeights(String),

    #[error("unknown institution `{0}`")]
    UnknownInstitution(String),

    #[error("empty candidate pool: {0}")]
    EmptyPool(String),

    #[error("unknown experiment `{0}`")]
    UnknownExperiment(String),

    #[error("duplicate result key {0}")]
    DuplicateRow(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Errors caused by bad user input (configs, schemas, data files) rather
    /// than failures while running an experiment.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::Config(_)
                | Error::BatchSize { .. }
                | Error::Schema(_)
                | Error::Parse { .. }
                | Error::Validation { .. }
                | Error::Json(_)
                | Error::Csv(_)
                | Error::UnknownInstitution(_)
                | Error::UnknownExperiment(_)
        )
    }
}
