use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {lhs} vs {rhs}")]
    Shape { lhs: String, rhs: String },

    #[error("empty sequence")]
    EmptySequence,

    #[error("consistency error: {0}")]
    Consistency(String),

    #[error("operation requires {expected} mode, got {actual}")]
    Mode {
        expected: &'static str,
        actual: &'static str,
    },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("ensemble weights are degenerate: {0}")]
    DegenerateWeights(String),

    #[error("non-finite value in `{tensor}`")]
    NonFinite { tensor: String },

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("parse error in record {record}, field `{field}`: {reason}")]
    Parse {
        record: usize,
        field: String,
        reason: String,
    },

    #[error("validation error in record {record}: {reason}")]
    Validation { record: usize, reason: String },

    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn shape(lhs: impl Into<String>, rhs: impl Into<String>) -> Self {
        Error::Shape {
            lhs: lhs.into(),
            rhs: rhs.into(),
        }
    }

    pub(crate) fn parse(record: usize, field: &str, reason: impl Into<String>) -> Self {
        Error::Parse {
            record,
            field: field.to_string(),
            reason: reason.into(),
        }
    }

    /// True for errors caused by malformed or inconsistent input data.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. } | Error::Validation { .. } | Error::Version { .. } | Error::Input(_) | Error::Io(_)
        )
    }

    /// True for errors raised by the numerics (overflow, NaN).
    pub fn is_numeric_error(&self) -> bool {
        matches!(self, Error::NonFinite { .. } | Error::Numeric(_))
    }
}
