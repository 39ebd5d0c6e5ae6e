//! Error type shared by all modules.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid partition: {0}")]
    InvalidPartition(String),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("invalid frequencies: {0}")]
    InvalidFrequencies(String),

    #[error("partition enumeration refused: n = {n} exceeds cap {cap}")]
    EnumerationCap { n: usize, cap: usize },

    #[error("operation undefined for the empty partition")]
    EmptyPartition,

    #[error("partition sizes do not match: {0} vs {1}")]
    SizeMismatch(usize, usize),

    #[error("domain error: {0}")]
    Domain(String),

    #[error(
        "series could not be stabilized at {max_bits} bits \
         (cancellation ratio {cancellation:.3e})"
    )]
    PrecisionExhausted { max_bits: u32, cancellation: f64 },

    #[error("probability {value:.6e} below the clamping floor; likely an implementation bug")]
    NegativeProbability { value: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;
