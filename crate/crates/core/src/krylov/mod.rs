//! Liouvillian action, Lanczos recursion and Krylov-chain dynamics.

mod amplitudes;
mod lanczos;
mod liouvillian;

pub use amplitudes::{evolve_amplitudes, k_complexity, WaveAmplitudes};
pub use lanczos::{
    format_coefficients, lanczos, write_coefficients, Engine, LanczosConfig, LanczosResult,
    Reorthogonalization, SpectralMeasure, DEFAULT_BREAKDOWN_TOL,
};
pub use liouvillian::liouvillian_apply;
