//! Error types shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Structural problem in an input file (bad header, off-grid or
    /// non-monotonic timestamps, duplicates).
    #[error("schema error (line {line}): {msg}")]
    Schema { line: u64, msg: String },

    /// A field parsed but its value is not allowed (negative power, NaN).
    #[error("value error (line {line}): {msg}")]
    Value { line: u64, msg: String },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    /// Too few samples or zero variance; bandwidth selection is impossible.
    #[error("degenerate samples: {0}")]
    DegenerateSamples(&'static str),

    #[error("invalid off-peak schedule: {0}")]
    InvalidSchedule(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// Two series that must share a time base do not.
    #[error("series not aligned: {0}")]
    Alignment(String),

    /// Requested a consumption fraction for a curve with zero total energy.
    #[error("consumption fraction undefined: total energy is zero")]
    UndefinedFraction,

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
