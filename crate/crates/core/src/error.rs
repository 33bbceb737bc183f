use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("sizing error: {0}")]
    Sizing(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("burn-in error: day index {index} needs at least {required} prior days")]
    BurnIn { index: usize, required: usize },

    #[error("alignment error: {message} (offending dates: {dates:?})")]
    Alignment { message: String, dates: Vec<String> },

    #[error("truncation error: target window t+1..t+{horizon} exceeds sample at index {index}")]
    Truncation { index: usize, horizon: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("singular design: {0}")]
    Singular(String),

    #[error("iteration limit reached after {sweeps} sweeps (max coefficient change {max_change:e})")]
    IterationLimit { sweeps: usize, max_change: f64 },

    #[error("training diverged at epoch {epoch}")]
    Divergence { epoch: usize },

    #[error("empty data: {0}")]
    Empty(String),

    #[error("parse error in {path}: {message}")]
    Parse { path: String, message: String },

    #[error("unknown model(s) {bad:?}; valid ids: {}", roster.join(", "))]
    UnknownModels { bad: Vec<String>, roster: Vec<String> },

    #[error("invalid configuration: {}", .0.join("; "))]
    ConfigProblems(Vec<String>),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
