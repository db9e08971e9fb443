//! Lanczos-coefficient statistics for random initial operators evolved by
//! billiard Hamiltonians.
//!
//! The pipeline is: billiard spectrum ([`billiard`]) → random Hermitian
//! operator ([`ensembles`]) → Lanczos coefficients ([`krylov`]) → log-ratio
//! variance and correlation matrices ([`stats`]) → distribution fits
//! ([`fitting`]). [`harness`] runs it over many samples and persists results.

pub mod billiard;
pub mod ensembles;
pub mod error;
pub mod fitting;
pub mod harness;
pub mod krylov;
pub mod stats;

pub use billiard::{
    BilliardGeometry, BilliardKind, DiskPlacement, GridSpec, Spectrum, SpectrumCache,
    SpectrumRequest,
};
pub use ensembles::{sample_initial, EnsembleKind, OperatorMatrix, SeedSpec};
pub use error::{Error, Result};
pub use fitting::{BinRule, FitModel, FitReport};
pub use harness::{ExportFormat, RunConfig, RunRecord, SpectrumSource};
pub use krylov::{lanczos, Engine, LanczosConfig, LanczosResult, Reorthogonalization};
pub use stats::WindowSpec;
