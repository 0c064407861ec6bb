use thiserror::Error;

/// Error type shared across the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// An input value violated a precondition (non-finite, out of range, ...).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A required piece of input was missing (e.g. a composition key).
    #[error("incomplete input: {0}")]
    IncompleteInput(String),

    /// Team composition constraints were violated.
    #[error("composition error: {0}")]
    Composition(String),

    /// Arguments outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// An action marginal whose cells are not integral under the uniform
    /// state distribution; the closed-form count does not apply.
    #[error("infeasible marginal: {0}")]
    InfeasibleMarginal(String),

    /// The requested enumeration exceeds the search-space guard.
    #[error("capacity error: {0}")]
    Capacity(String),

    /// A caller broke an operation contract (shape mismatch, empty batch, ...).
    #[error("contract error: {0}")]
    Contract(String),

    /// A step was requested on a finished episode.
    #[error("episode already complete")]
    EpisodeComplete,

    /// Malformed file contents, with the byte offset of the problem.
    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    /// NaN/Inf encountered where finite values are required.
    #[error("numerical health error: {0}")]
    NumericalHealth(String),

    /// Base-model training exhausted its retry budget.
    #[error("training failure (best score {best_score}): {message}")]
    TrainingFailure { best_score: f64, message: String },

    /// Dataset generation could not satisfy the requested sizes.
    #[error("insufficient data: {0}")]
    InsufficientData(String),

    /// Checkpoint could not be read or did not match expectations.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// Experiment configuration problem.
    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
