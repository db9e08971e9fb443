//! Billiard geometries, their Dirichlet spectra, and the spectrum file cache.

pub mod eigen;
pub mod geometry;
pub mod grid;
pub mod spectrum;

pub use geometry::{make_geometry, BilliardGeometry, BilliardKind, BoundingBox, DiskPlacement};
pub use grid::{discretize, CsrMatrix, GridDiscretization};
pub use spectrum::{
    converged_spectrum, load_spectrum, save_spectrum, solve_levels, solve_spectrum, GridSpec,
    Provenance, Spectrum, SpectrumCache, SpectrumOrigin, SpectrumRequest, SpectrumSolution,
    CACHE_DIR_ENV,
};
