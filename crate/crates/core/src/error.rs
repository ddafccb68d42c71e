//! Error types shared across the crate.

use thiserror::Error;

/// Errors produced by operators, solvers, the simulator and the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// Dimension mismatch between two objects, naming the offending axis.
    #[error("shape mismatch on axis `{axis}`: expected {expected}, got {actual}")]
    Shape {
        axis: &'static str,
        expected: usize,
        actual: usize,
    },

    /// An input value violates a precondition.
    #[error("invalid input: {0}")]
    Invalid(String),

    /// A numerical method produced a non-finite value.
    #[error("non-finite value in {stage} at iteration {iteration}")]
    NonFinite { stage: &'static str, iteration: usize },

    /// A pipeline stage failed; wraps the underlying cause.
    #[error("pipeline stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    /// File I/O error.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn shape(axis: &'static str, expected: usize, actual: usize) -> Self {
        Error::Shape {
            axis,
            expected,
            actual,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    /// Tags an error with the pipeline stage it occurred in.
    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}

/// Checks that a dimension matches, returning a shape error naming the axis.
pub(crate) fn check_dim(axis: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::shape(axis, expected, actual));
    }
    Ok(())
}
