use thiserror::Error;

/// Errors produced by the protection, matching and evaluation routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid group layout: {0}")]
    InvalidLayout(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("layout mismatch: (d={left_d}, m={left_m}) vs (d={right_d}, m={right_m})")]
    LayoutMismatch {
        left_d: usize,
        left_m: usize,
        right_d: usize,
        right_m: usize,
    },

    #[error("group {group} has (near) zero norm")]
    ZeroGroup { group: usize },

    #[error("invalid group weights: {0}")]
    InvalidWeights(String),

    #[error("invalid protection parameters: {0}")]
    InvalidParams(String),

    #[error("degenerate angle in group {group}: template is (anti)parallel to its key")]
    DegenerateAngle { group: usize },

    #[error("dropout budget {drop} leaves no coordinate in a group of dimension {group_dim}")]
    BudgetTooLarge { drop: usize, group_dim: usize },

    #[error("weighted dropout budget {budget} exceeds capacity {capacity}")]
    InfeasibleBudget { budget: usize, capacity: usize },

    #[error("protected template was produced under different protection parameters")]
    ParamsMismatch,

    #[error("template store is empty")]
    EmptyStore,

    #[error("need at least {required} mated and non-mated pairs, got {mated} / {non_mated}")]
    InsufficientPairs {
        required: usize,
        mated: usize,
        non_mated: usize,
    },

    #[error("noise calibration failed: {0}")]
    CalibrationFailure(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("malformed template input at line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error("store format error: {0}")]
    Format(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
