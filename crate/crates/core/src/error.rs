use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("geometry has an empty region (kind {kind}, a = {a})")]
    EmptyRegion { kind: String, a: f64 },

    #[error("grid too coarse: {points} interior points, need at least {required}")]
    TooCoarse { points: usize, required: usize },

    #[error("eigensolver did not converge after {iterations} iterations (worst relative residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("linear algebra failure: {0}")]
    LinearAlgebra(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("level count mismatch: file holds {found} levels, {expected} requested")]
    LevelCountMismatch { expected: usize, found: usize },

    #[error("initial operator is zero")]
    ZeroOperator,

    #[error("non-finite value encountered at Lanczos step {step}")]
    NonFinite { step: usize },

    #[error(
        "window [{start}, {end}) needs {needed} coefficients but the run only has {available}"
    )]
    WindowExceedsRun {
        start: usize,
        end: usize,
        needed: usize,
        available: usize,
    },

    #[error("zero coefficient at index {index}")]
    ZeroCoefficient { index: usize },

    #[error("degenerate sample: {0}")]
    DegenerateSample(String),

    #[error("malformed file {path}: {reason}")]
    Malformed { path: PathBuf, reason: String },

    #[error(
        "premature Lanczos breakdown in {failed} of {total} samples (ensemble {ensemble}); \
         shortest run had {shortest} coefficients, window needs {needed}"
    )]
    PrematureBreakdown {
        ensemble: String,
        failed: usize,
        total: usize,
        shortest: usize,
        needed: usize,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
    let path = path.into();
    move |source| Error::Io { path, source }
}
