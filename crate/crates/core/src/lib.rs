//! Ensemble Kalman filters with spectral covariance approximations.
//!
//! The forecast covariance is replaced by its diagonal in an orthonormal
//! basis (sine or periodized wavelet), which keeps the analysis update cheap
//! and suppresses spurious long-range correlations from small ensembles
//! without explicit localization.

pub mod covariance;
pub mod enkf;
mod error;
pub mod linalg;
pub mod synthetic;
pub mod transforms;

pub use covariance::{
    build_interpolation, reconstruct_dense, sample_covariance, sample_mean,
    spectral_cross_diagonal, spectral_diagonal, CrossSpectralDiagonal, DiagonalSpectralCovariance,
    Ensemble, Grid, InterpolationOperator, Variable,
};
pub use enkf::{
    classical_update, draw_perturbations, innovation_solve, perturb_data, spectral_update_multi,
    spectral_update_single, AnalysisResult, CrossMode, Diagnostics, InnovationCovariance, Method,
    NoiseModel, ObservationBlock, ObservationSpec, SpectralConfig, SpectralNoise, StateProjection,
};
pub use error::{Error, Result};
pub use transforms::{
    coiflet2_filter, default_octaves, make_transform, OrthonormalTransform, TransformKind,
    WaveletFilter,
};
