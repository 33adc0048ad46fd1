use thiserror::Error;

/// Errors raised by the library. Engine failures that leave a partial trace
/// behind are wrapped in [`crate::engine::RunFailure`].
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid block layout: {0}")]
    InvalidLayout(String),

    #[error("layout mismatch: expected dimension {expected}, got {got}")]
    LayoutMismatch { expected: usize, got: usize },

    #[error("iterate {index} is older than the history window (oldest retained: {oldest})")]
    WindowExceeded { index: i64, oldest: i64 },

    #[error("non-consecutive push: expected index {expected}, got {got}")]
    NonConsecutiveIndex { expected: u64, got: u64 },

    #[error("block index {index} out of range for {blocks} blocks")]
    BlockOutOfRange { index: usize, blocks: usize },

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("soft-threshold level must be nonnegative, got {0}")]
    NegativeThreshold(f64),

    #[error("invalid box: lower bound {lower} exceeds upper bound {upper} at coordinate {index}")]
    InvalidBox { index: usize, lower: f64, upper: f64 },

    #[error("invalid operator: {0}")]
    InvalidOperator(String),

    #[error("operator is not nonexpansive: ratio {ratio} on witness pair")]
    NonexpansivenessViolated {
        ratio: f64,
        x: Vec<f64>,
        y: Vec<f64>,
    },

    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    MaxIterationsExceeded { iterations: usize, residual: f64 },

    #[error("deterministic delay schedule is empty")]
    EmptySchedule,

    #[error("deterministic delay model has no tail distribution")]
    DeterministicModel,

    #[error("invalid delay model: {0}")]
    InvalidDelayModel(String),

    #[error("tail sum does not converge within truncation {truncation} (remainder estimate {remainder:e})")]
    NonSummableTail { truncation: usize, remainder: f64 },

    #[error("epsilon sequence violates summability ({what}): remainder estimate {remainder:e} at truncation {truncation}")]
    SummabilityViolated {
        what: &'static str,
        truncation: usize,
        remainder: f64,
    },

    #[error("invalid step-size parameters: {0}")]
    InvalidParameters(String),

    #[error("invalid truncation: {0}")]
    InvalidTruncation(String),

    #[error("exact enumeration over {blocks} blocks exceeds the limit of {limit}")]
    EnumerationTooLarge { blocks: usize, limit: usize },

    #[error("descent violated at k={k} (delay {delay:?}, eta {eta}, slack {slack:e})")]
    DescentViolated {
        k: u64,
        delay: Vec<usize>,
        eta: f64,
        slack: f64,
    },

    #[error("divergence detected at k={k}: norm {norm:e}")]
    DivergenceDetected { k: u64, norm: f64 },

    #[error("worker panicked: {0}")]
    WorkerPanic(String),

    #[error("invalid run configuration: {0}")]
    InvalidConfig(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
