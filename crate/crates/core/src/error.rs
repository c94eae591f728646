use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("wavelet transform size {0} is not a power of two")]
    NotPowerOfTwo(usize),
    #[error("octave count {octaves} out of range 1..={max} for size {size}")]
    OctavesOutOfRange {
        octaves: usize,
        max: usize,
        size: usize,
    },
    #[error("transform size must be at least 2, got {0}")]
    SizeTooSmall(usize),
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("ensemble has {0} members, at least 2 are required")]
    EnsembleTooSmall(usize),
    #[error("grid has no nodes")]
    EmptyGrid,
    #[error("grid nodes must be strictly increasing")]
    InvalidGrid,
    #[error("variable index {0} out of range")]
    UnknownVariable(usize),
    #[error("innovation matrix is singular")]
    SingularInnovationMatrix,
    #[error("unsupported observation: {0}")]
    UnsupportedObservation(String),
    #[error("no interpolation operator from variable {variable} to the grid of observation block {block}")]
    MissingProjection { variable: usize, block: usize },
    #[error("invalid wavelet filter: {0}")]
    InvalidFilter(String),
    #[error("left inverse defect {defect:e} exceeds tolerance {tolerance:e}")]
    LeftInverseDefect { defect: f64, tolerance: f64 },
    #[error("variance {0} is negative or not finite")]
    NegativeVariance(f64),
    #[error("invalid noise model: {0}")]
    InvalidNoise(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_len(expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, actual })
    }
}
