use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("infeasible doubly stochastic matrix: max marginal violation {violation:e} exceeds tolerance {tol:e}")]
    Feasibility { violation: f64, tol: f64 },

    #[error("size {n} exceeds the limit of {max}")]
    Size { n: usize, max: usize },

    #[error("overflow evaluating exp at entry ({row}, {col}): argument {arg}")]
    Overflow { row: usize, col: usize, arg: f64 },

    #[error("tape error: {0}")]
    Tape(String),

    #[error("training diverged at step {step}: {reason}")]
    Training { step: usize, reason: String },

    #[error("format error at row {row}: {reason}")]
    Format { row: usize, reason: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Format {
            row: e.line(),
            reason: e.to_string(),
        }
    }
}
