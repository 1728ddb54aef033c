//! Error type shared across the crate.
//!
//! Every error carries a stable one-word class tag (see [`VlError::class`])
//! so command-line consumers can match on `error[<class>]:` lines without
//! parsing free-form messages.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, VlError>;

#[derive(Debug, Error)]
pub enum VlError {
    /// An argument violates a precondition (non-positive scale, zero order
    /// count, mismatched lengths, ...).
    #[error("{0}")]
    InvalidParameter(String),

    /// A window or index reaches outside the available samples.
    #[error("{0}")]
    Range(String),

    /// Input data is unusable: missing columns, ragged rows, non-numeric or
    /// non-finite cells, empty files.
    #[error("{0}")]
    Data(String),

    /// A file parsed as JSON/CSV but does not match the expected schema, or
    /// a model does not match the dataset it is applied to.
    #[error("{0}")]
    Schema(String),

    /// A configuration file is self-inconsistent.
    #[error("{0}")]
    Config(String),

    /// A model file is internally inconsistent (coefficient vector length vs
    /// its column index, for example).
    #[error("{0}")]
    Integrity(String),

    /// A parameter-count computation exceeded 128-bit integer range.
    #[error("{0}")]
    Overflow(String),

    /// Every multistart candidate produced an unusable objective value.
    /// Carries the full evaluation trace for post-mortems.
    #[error("time-scale search failed: all {evaluations} objective evaluations were unusable")]
    TuningFailed {
        evaluations: usize,
        trace: Vec<crate::tuner::TraceRow>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl VlError {
    /// Stable machine-readable class tag for this error.
    pub fn class(&self) -> &'static str {
        match self {
            VlError::InvalidParameter(_) => "invalid-parameter",
            VlError::Range(_) => "range",
            VlError::Data(_) => "data",
            VlError::Schema(_) => "schema",
            VlError::Config(_) => "config",
            VlError::Integrity(_) => "integrity",
            VlError::Overflow(_) => "overflow",
            VlError::TuningFailed { .. } => "tuning-failed",
            VlError::Io(_) => "io",
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn class_tags_are_stable() {
        assert_eq!(
            VlError::InvalidParameter("x".into()).class(),
            "invalid-parameter"
        );
        assert_eq!(VlError::Range("x".into()).class(), "range");
        assert_eq!(VlError::Data("x".into()).class(), "data");
        assert_eq!(VlError::Schema("x".into()).class(), "schema");
        assert_eq!(VlError::Config("x".into()).class(), "config");
        assert_eq!(VlError::Integrity("x".into()).class(), "integrity");
        assert_eq!(VlError::Overflow("x".into()).class(), "overflow");
        let io = VlError::Io(std::io::Error::new(std::io::ErrorKind::NotFound, "gone"));
        assert_eq!(io.class(), "io");
    }

    #[test]
    fn messages_pass_through() {
        let e = VlError::Data("non-numeric cell at data row 17".into());
        assert_eq!(e.to_string(), "non-numeric cell at data row 17");
    }
}
