use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse grouping used by front ends to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Config,
    Data,
    Numeric,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("schema error: {0}")]
    Schema(String),

    #[error("missing column `{0}` in CSV header")]
    MissingColumn(String),

    #[error("row {row}, column `{column}`: undeclared level {value}")]
    UndeclaredLevel {
        row: usize,
        column: String,
        value: String,
    },

    #[error("row {row}, column `{column}`: cannot parse `{value}` as a number")]
    Parse {
        row: usize,
        column: String,
        value: String,
    },

    #[error("row {row}, column `{column}`: {message}")]
    InvalidValue {
        row: usize,
        column: String,
        message: String,
    },

    #[error("csv error in {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid level index {index} for categorical input {feature} (allowed < {allowed})")]
    InvalidLevel {
        feature: usize,
        index: usize,
        allowed: usize,
    },

    #[error("refusing to enumerate 2^{q} coalitions (limit q <= {limit}); use sampled mode")]
    EnumerationLimit { q: usize, limit: usize },

    #[error("non-finite loss during training at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },

    #[error("model file format version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("corrupt model file {path}: {message}")]
    Corrupt { path: PathBuf, message: String },

    #[error("no row has a prediction within relative tolerance {delta} of the null model {mu0}; try a larger delta")]
    NoMaskCandidate { delta: f64, mu0: f64 },

    #[error("value table is incomplete: missing coalition {0:#b}")]
    IncompleteTable(u64),

    #[error("kernel system is singular: {0}")]
    Singular(String),

    #[error("conditioning event has zero probability mass")]
    ZeroMass,

    #[error("numeric failure: {0}")]
    Numeric(String),
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Schema(_) | Error::InvalidArgument(_) | Error::EnumerationLimit { .. } => {
                ErrorCategory::Config
            }
            Error::MissingColumn(_)
            | Error::UndeclaredLevel { .. }
            | Error::Parse { .. }
            | Error::InvalidValue { .. }
            | Error::Csv { .. }
            | Error::Io { .. }
            | Error::Shape(_)
            | Error::InvalidLevel { .. }
            | Error::Version { .. }
            | Error::Corrupt { .. }
            | Error::IncompleteTable(_)
            | Error::ZeroMass => ErrorCategory::Data,
            Error::NonFiniteLoss { .. }
            | Error::NoMaskCandidate { .. }
            | Error::Singular(_)
            | Error::Numeric(_) => ErrorCategory::Numeric,
        }
    }
}
