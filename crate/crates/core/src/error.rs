use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the estimation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed CSV at line {line}: {message}")]
    Csv { line: u64, message: String },

    #[error("column `{column}` mixes numeric and non-numeric cells (row {row}: `{cell}`)")]
    NonNumericCell {
        column: String,
        row: usize,
        cell: String,
    },

    #[error("unknown column `{0}`")]
    UnknownColumn(String),

    #[error("invalid role specification: {0}")]
    InvalidRoles(String),

    #[error("invalid analysis frame: {0}")]
    InvalidFrame(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid learner: {0}")]
    InvalidLearner(String),

    #[error("learner failed: {0}")]
    LearnerFailed(String),

    #[error("singular normal equations ({0})")]
    Singular(String),

    #[error("empty stratum: no rows with R = {arm} for {what}")]
    EmptyStratum { arm: u8, what: String },

    #[error("missing nuisance: {0}")]
    MissingNuisance(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid discrete DGP: {0}")]
    InvalidDgp(String),

    #[error("positivity violation: {0}")]
    Positivity(String),

    #[error("invalid scale: {0}")]
    Scale(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
