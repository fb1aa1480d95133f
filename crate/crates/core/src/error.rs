use thiserror::Error;

/// Errors raised anywhere in the laboratory.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },

    #[error("invalid architecture or target spec: {0}")]
    Spec(String),

    #[error("layer {layer} has zero norm and cannot be decomposed")]
    DegenerateLayer { layer: usize },

    #[error("zero vector has no tangent space")]
    ZeroVector,

    #[error("flow diverged at step {step}: {reason}")]
    Diverged { step: usize, reason: String },

    #[error("training failed at step {step}: {reason}")]
    Training { step: usize, reason: String },

    #[error("data are not linearly separable by the requested model class")]
    NotSeparable,

    #[error("did not converge after {steps} steps (residual {residual:.3e})")]
    NonConvergence { steps: usize, residual: f64 },

    #[error("problem too large: {0}")]
    TooLarge(String),

    #[error("rate fit failed: {0}")]
    Fit(String),

    #[error("configuration error at `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("replay mismatch: {0}")]
    Replay(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code used by the command line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } | Error::Parse(_) | Error::Spec(_) | Error::Json(_) => 2,
            Error::NonConvergence { .. } => 4,
            Error::Io(_) | Error::Csv(_) => 1,
            _ => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
