use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("schema error: {0}")]
    Schema(String),

    #[error("parse error at row {row}, column `{column}`: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("degenerate labels: {0}")]
    DegenerateLabels(String),

    #[error("cross-fit degenerate: fold {fold} complement has no {missing} samples; try a smaller number of folds")]
    CrossFitDegenerate { fold: usize, missing: &'static str },

    #[error("overlap violation: propensity {0} is not in (0, 1)")]
    Overlap(f64),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("bound violation at index {index}: delta {value} outside [{lower}, {upper}]")]
    BoundViolation {
        index: usize,
        value: f64,
        lower: f64,
        upper: f64,
    },

    #[error("replication with seed {seed} failed: {source}")]
    Replication {
        seed: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable tag, used in the CLI's JSON error output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Schema(_) => "schema",
            Error::Parse { .. } => "parse",
            Error::Config(_) => "config",
            Error::Numerical(_) => "numerical",
            Error::DegenerateLabels(_) => "degenerate_labels",
            Error::CrossFitDegenerate { .. } => "cross_fit_degenerate",
            Error::Overlap(_) => "overlap",
            Error::Dimension { .. } => "dimension",
            Error::BoundViolation { .. } => "bound_violation",
            Error::Replication { .. } => "replication",
            Error::Io { .. } => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
        }
    }
}
