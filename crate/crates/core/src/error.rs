//! Crate-wide error type.

use std::fmt;

use thiserror::Error;

/// One offending line in a text input, reported with its 1-based line number.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LineIssue {
    pub line: usize,
    pub message: String,
}

impl fmt::Display for LineIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    /// A precondition on an operation's inputs was violated.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Metric is undefined for the given inputs (e.g. single-label AUC).
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    /// A binary or structured file did not match its format.
    #[error("format error in {path} at byte {offset}: {message}")]
    Format {
        path: String,
        offset: u64,
        message: String,
    },

    /// A line-delimited text input failed validation; all offending lines
    /// are listed.
    #[error("validation failed for {path}:\n{}", format_issues(issues))]
    Validation { path: String, issues: Vec<LineIssue> },

    /// Two artifacts that must belong together do not (e.g. a model set
    /// bound to a different region map).
    #[error("artifact mismatch: {0}")]
    ArtifactMismatch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    /// A contract the library itself guarantees was broken.
    #[error("internal error: {0}")]
    Internal(String),
}

fn format_issues(issues: &[LineIssue]) -> String {
    issues
        .iter()
        .map(LineIssue::to_string)
        .collect::<Vec<_>>()
        .join("\n")
}

impl Error {
    pub fn invalid_argument(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
