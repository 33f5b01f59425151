//! Crate-wide error type.

/// Errors produced by the workbench.
///
/// Variants map onto the CLI exit codes: configuration/domain problems,
/// data problems, numeric failures and the dedicated "PIL undefined" state
/// that arises when the validation split is smaller than one batch.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A value was outside its documented domain (for example a pmf
    /// parameter outside `[0, 1)` or a discount factor of exactly 1).
    #[error("domain error: {0}")]
    Domain(String),

    /// An environment, policy or posterior failed its construction
    /// invariants (rows not summing to one, negative variances, ...).
    #[error("invalid model: {0}")]
    InvalidModel(String),

    /// A dataset was unusable: empty where data is required, indices out of
    /// range, no completed episode, and similar.
    #[error("data error: {0}")]
    Data(String),

    /// A dataset file contained a malformed record.
    #[error("malformed dataset at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// A numeric procedure failed: divergence (NaN loss), non-convergence
    /// within the iteration cap, or a non-finite intermediate value.
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// The PIL cannot be computed because the validation split is smaller
    /// than a single batch.
    #[error("PIL undefined: {0}")]
    PilUndefined(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
