use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-positive or non-finite squared slowness {value} at index {index}")]
    NonPositiveSlowness { index: usize, value: f64 },

    #[error("bad shape: {0}")]
    BadShape(String),

    #[error("non-finite matrix entry at ({row}, {col})")]
    NonFiniteEntry { row: usize, col: usize },

    #[error("shape mismatch: expected {expected:?}, found {found:?}")]
    ShapeMismatch { expected: (usize, usize), found: (usize, usize) },

    #[error("singular operator: pivot {index} has magnitude {magnitude:e}")]
    SingularOperator { index: usize, magnitude: f64 },

    #[error("subsampling ratio {0} outside (0, 1]")]
    BadRatio(f64),

    #[error("wrong data domain: expected {expected}, found {found}")]
    WrongDomain { expected: &'static str, found: &'static str },

    #[error("residual budget too tight: v(tau) = {v_tau:e} > epsilon = {epsilon:e} at tau = {tau:e}")]
    BudgetTooTight { epsilon: f64, v_tau: f64, tau: f64 },

    #[error("reference matrix has zero norm")]
    ZeroReference,

    #[error("empty frequency schedule")]
    EmptySchedule,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("malformed matrix file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
