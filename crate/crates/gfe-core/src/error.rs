//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by panel construction, estimation, and inference.
#[derive(Debug, Error)]
pub enum Error {
    #[error("failed to read `{path}`: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("CSV parse error in `{path}`: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },

    #[error("missing column `{0}` in CSV header")]
    MissingColumn(String),

    #[error("duplicate observation for unit `{unit}` at period `{period}`")]
    DuplicateObservation { unit: String, period: String },

    #[error("row {row}: column `{column}` has non-numeric value `{value}`")]
    NonNumeric {
        row: usize,
        column: String,
        value: String,
    },

    #[error("row {row}: period `{value}` is neither an integer nor an ISO date (YYYY-MM-DD)")]
    InvalidPeriod { row: usize, value: String },

    #[error("row {row}: empty value in column `{column}`; partial rows are rejected")]
    PartialRow { row: usize, column: String },

    #[error("panel has no observations")]
    EmptyPanel,

    #[error("design matrix is rank deficient; dependent columns: {}", .0.join(", "))]
    RankDeficient(Vec<String>),

    #[error("period `{0}` has no observations (empty period)")]
    EmptyPeriod(String),

    #[error("group {0} has no members (empty group)")]
    EmptyGroup(usize),

    #[error("group {group} has no observations in period `{period}`")]
    EmptyCell { group: usize, period: String },

    #[error("unknown unit `{0}` in group assignment")]
    UnknownUnit(String),

    #[error("{failed} of {total} bootstrap replications failed; more than 10% is treated as fatal")]
    BootstrapFailureBudget { failed: usize, total: usize },

    #[error("{0}")]
    InvalidInput(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Convenience constructor for validation failures.
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
