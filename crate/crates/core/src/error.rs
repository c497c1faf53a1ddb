use thiserror::Error;

/// Errors produced by the core library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("empty box: lo {lo} > hi {hi}")]
    EmptyBox { lo: f64, hi: f64 },
    #[error("sample size {m} out of range for population {p}")]
    BadSampleSize { m: usize, p: usize },
    #[error("degenerate step size {got}; curvature estimate must be positive and finite")]
    DegenerateStep { got: f64 },
    #[error("gamma must exceed 1 for Lipschitz-scaled step rules, got {0}")]
    GammaTooSmall(f64),
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("round has no active clients")]
    EmptyRound,
    #[error("undefined statistic: {0}")]
    UndefinedStatistic(String),
    #[error("label {label} out of range for {k} clusters")]
    LabelOutOfRange { label: usize, k: usize },
    #[error("bad file header: {0}")]
    FormatBadHeader(String),
    #[error("dimension overflow: {0}")]
    FormatDimOverflow(String),
    #[error("truncated payload: expected {expected} bytes, got {got}")]
    FormatTruncated { expected: usize, got: usize },
    #[error("malformed value: {0}")]
    FormatMalformedValue(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
