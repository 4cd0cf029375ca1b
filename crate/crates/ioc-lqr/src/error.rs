use thiserror::Error;

/// Error type shared by every module in the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed input: dimension mismatches, non-finite entries, bad parameters.
    #[error("invalid input: {0}")]
    Input(String),

    /// A matrix that must be (semi)definite is not.
    #[error("definiteness violation: {0}")]
    Definiteness(String),

    /// Structural model assumptions (controllability, observability, actuation rank) fail.
    #[error("model assumption violated: {0}")]
    Model(String),

    /// An iterative method failed to converge or produced an unusable result.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// The requested operation is undefined for these problem dimensions.
    #[error("not applicable: {0}")]
    NotApplicable(String),

    /// Text-format parse failure, with the 1-based source line.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
