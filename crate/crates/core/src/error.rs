use thiserror::Error;

pub type Result<T> = std::result::Result<T, PogmError>;

#[derive(Debug, Error)]
pub enum PogmError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("non-finite value at index {index} after {op}")]
    NonFinite { op: &'static str, index: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid model spec: {0}")]
    InvalidSpec(String),

    #[error("numeric failure in layer {layer}: {message}")]
    NumericLayer { layer: usize, message: String },

    #[error("numeric failure in round {round}: {message}")]
    NumericRound { round: usize, message: String },

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("inconsistent trajectories: {0}")]
    Consistency(String),

    #[error("history error: {0}")]
    History(String),

    #[error("alignment error: {0}")]
    Alignment(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl PogmError {
    /// True for failures caused by the numbers themselves (NaN, overflow,
    /// degenerate solver state) rather than bad input or I/O.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            PogmError::NonFinite { .. }
                | PogmError::NumericLayer { .. }
                | PogmError::NumericRound { .. }
        )
    }

    pub fn is_io(&self) -> bool {
        matches!(self, PogmError::Io(_))
    }
}
