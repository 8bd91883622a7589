use thiserror::Error;

/// Errors raised anywhere in the simulator.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum AqError {
    #[error("every net amplitude count is zero")]
    AllCountsZero,
    #[error("matrix is not Hermitian (|h[{row}][{col}] - conj(h[{col}][{row}])| = {defect:e})")]
    NotHermitian { row: usize, col: usize, defect: f64 },
    #[error("unsupported block kind {0}")]
    UnsupportedKind(String),
    #[error("coefficient {re} + {im}i is neither real nor purely imaginary")]
    NonRealCoefficient { re: f64, im: f64 },
    #[error("membrane schedule needs a non-empty decomposition")]
    EmptyDecomposition,
    #[error("count for {what} exceeds cap {cap}")]
    CountOverflow { what: String, cap: u64 },
    #[error("quantum {id} escaped the bubble (|r| = {radius})")]
    EscapedQuantum { id: u64, radius: f64 },
    #[error("cannot delete a complementary pair of {0}")]
    CannotDelete(String),
    #[error("virtual state is already real")]
    AlreadyReal,
    #[error("measurement did not complete within {0} arrivals")]
    Timeout(u64),
    #[error("outcome {outcome} is out of range for dimension {dim}")]
    InvalidOutcome { outcome: usize, dim: usize },
    #[error("bubble would lose its last grain")]
    EmptyBubble,
    #[error("bubbles share no touching area")]
    NoTouchingArea,
    #[error("two-particle rule changes spectator slot {0}")]
    SpectatorMismatch(usize),
    #[error("system is still connected")]
    NoSplit,
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("expected probabilities are degenerate")]
    DegenerateExpected,
    #[error("partitioned run needs at least {min} workers, got {got}")]
    TooFewWorkers { min: usize, got: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

pub type Result<T> = std::result::Result<T, AqError>;

impl AqError {
    /// Process exit status: 2 for bad input, 3 for faults during a run.
    pub fn exit_code(&self) -> i32 {
        match self {
            AqError::Config(_)
            | AqError::Io { .. }
            | AqError::NotHermitian { .. }
            | AqError::DimensionMismatch(..)
            | AqError::UnsupportedKind(_)
            | AqError::NonRealCoefficient { .. }
            | AqError::TooFewWorkers { .. }
            | AqError::EmptyDecomposition => 2,
            _ => 3,
        }
    }
}
