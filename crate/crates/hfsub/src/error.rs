use thiserror::Error;

/// Every failure the library reports.
#[derive(Debug, Error)]
pub enum Error {
    #[error("series too short: need at least {needed} observations, got {got}")]
    SeriesTooShort { needed: usize, got: usize },
    #[error("empty series")]
    EmptySeries,
    #[error("non-finite value at index {0}")]
    NonFinite(usize),
    #[error("negative power {0}")]
    NegativePower(f64),
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("invalid truncation: {0}")]
    InvalidTruncation(String),
    #[error("power spec must have r = 0 in every component")]
    NonPurePowers,
    #[error("domain error: {0}")]
    DomainError(String),
    #[error("quadrature did not reach tolerance {tol:e} ({detail})")]
    QuadratureFailure { tol: f64, detail: String },
    #[error("pre-averaging window kn = {kn} too large for {n} returns")]
    WindowTooLarge { kn: usize, n: usize },
    #[error("need at least 2 subsamples, got {0}")]
    TooFewSubsamples(usize),
    #[error("subsample too small: {0}")]
    SubsampleTooSmall(String),
    #[error("block too small: {0}")]
    BlockTooSmall(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("configuration leaves zero blocks per subsample")]
    ZeroBlocks,
    #[error("non-positive variance {value} for component {index}")]
    NonPositiveVariance { index: usize, value: f64 },
    #[error("non-positive estimate: {0}")]
    NonPositiveEstimate(String),
    #[error("matrix is not square: {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("invalid confidence level {0}")]
    InvalidLevel(f64),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("heteroskedastic noise needs the spot variance path")]
    MissingSigmaPath,
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("non-positive price on line {0}")]
    NonPositivePrice(usize),
    #[error("timestamps not increasing on line {0}")]
    NonMonotoneTime(usize),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True when the inputs are valid but the requested configuration cannot be
    /// carried out on the available data.
    pub fn is_infeasible(&self) -> bool {
        matches!(
            self,
            Error::WindowTooLarge { .. }
                | Error::TooFewSubsamples(_)
                | Error::SubsampleTooSmall(_)
                | Error::BlockTooSmall(_)
                | Error::InsufficientData(_)
                | Error::ZeroBlocks
                | Error::SeriesTooShort { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
