//! Random initial operators in the energy basis.
//!
//! Each `(master_seed, sample_index)` pair owns a ChaCha8 stream (the index is
//! the stream id), so a sample never depends on how many others were drawn
//! before it or on which thread drew it.

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use rand::distr::Open01;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SQRT3: f64 = 1.732_050_807_568_877_2;
const FRAC_1_SQRT2: f64 = std::f64::consts::FRAC_1_SQRT_2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EnsembleKind {
    /// Real symmetric, density ∝ exp(-Tr O²/2).
    #[serde(rename = "GOE")]
    Goe,
    /// Complex Hermitian, density ∝ exp(-Tr O²/2).
    #[serde(rename = "GUE")]
    Gue,
    /// Real symmetric, entries uniform on (-√3, √3).
    #[serde(rename = "URE")]
    Ure,
    /// Purely imaginary Hermitian, magnitudes uniform on (-√3, √3), zero diagonal.
    #[serde(rename = "UIM")]
    Uim,
    /// Complex Hermitian, real and imaginary parts uniform on (-√3, √3).
    #[serde(rename = "UCP")]
    Ucp,
}

impl EnsembleKind {
    pub const ALL: [EnsembleKind; 5] = [
        EnsembleKind::Goe,
        EnsembleKind::Gue,
        EnsembleKind::Ure,
        EnsembleKind::Uim,
        EnsembleKind::Ucp,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            EnsembleKind::Goe => "GOE",
            EnsembleKind::Gue => "GUE",
            EnsembleKind::Ure => "URE",
            EnsembleKind::Uim => "UIM",
            EnsembleKind::Ucp => "UCP",
        }
    }

    /// Whether the entries carry a single real degree of freedom (GOE, URE, UIM).
    pub fn is_real_valued(&self) -> bool {
        matches!(
            self,
            EnsembleKind::Goe | EnsembleKind::Ure | EnsembleKind::Uim
        )
    }

    fn tag(&self) -> u64 {
        match self {
            EnsembleKind::Goe => 1,
            EnsembleKind::Gue => 2,
            EnsembleKind::Ure => 3,
            EnsembleKind::Uim => 4,
            EnsembleKind::Ucp => 5,
        }
    }

    /// Master seed for this ensemble, so that different ensembles never share streams.
    pub fn derive_seed(&self, master_seed: u64) -> u64 {
        splitmix64(master_seed ^ splitmix64(self.tag()))
    }
}

impl fmt::Display for EnsembleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EnsembleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "GOE" => Ok(EnsembleKind::Goe),
            "GUE" => Ok(EnsembleKind::Gue),
            "URE" => Ok(EnsembleKind::Ure),
            "UIM" => Ok(EnsembleKind::Uim),
            "UCP" => Ok(EnsembleKind::Ucp),
            other => Err(Error::InvalidParameter(format!(
                "unknown ensemble `{other}`"
            ))),
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SeedSpec {
    pub master_seed: u64,
    pub sample_index: u64,
}

impl SeedSpec {
    pub fn new(master_seed: u64, sample_index: u64) -> Self {
        Self {
            master_seed,
            sample_index,
        }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master_seed);
        rng.set_stream(self.sample_index);
        rng
    }
}

/// Dense complex `N×N` matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorMatrix {
    dim: usize,
    data: Vec<Complex64>,
}

impl OperatorMatrix {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            data: vec![Complex64::new(0.0, 0.0); dim * dim],
        }
    }

    pub fn from_fn(dim: usize, mut f: impl FnMut(usize, usize) -> Complex64) -> Self {
        let mut data = Vec::with_capacity(dim * dim);
        for m in 0..dim {
            for n in 0..dim {
                data.push(f(m, n));
            }
        }
        Self { dim, data }
    }

    /// Real matrix from rows.
    pub fn from_real_rows(rows: &[&[f64]]) -> Result<Self> {
        let dim = rows.len();
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::InvalidParameter(
                "rows must form a square matrix".into(),
            ));
        }
        Ok(Self::from_fn(dim, |m, n| Complex64::new(rows[m][n], 0.0)))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, m: usize, n: usize) -> Complex64 {
        self.data[m * self.dim + n]
    }

    #[inline]
    pub fn set(&mut self, m: usize, n: usize, v: Complex64) {
        self.data[m * self.dim + n] = v;
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    /// `entry(m, n) == conj(entry(n, m))` exactly.
    pub fn is_hermitian(&self) -> bool {
        (0..self.dim).all(|m| (m..self.dim).all(|n| self.get(m, n) == self.get(n, m).conj()))
    }

    /// `sqrt(tr[O† O])`.
    pub fn norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// `tr[A† B]`.
    pub fn inner(&self, other: &OperatorMatrix) -> Complex64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a.conj() * b)
            .sum()
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            dim: self.dim,
            data: self.data.iter().map(|z| z * c).collect(),
        }
    }

    /// `alpha * self + beta * other`.
    pub fn combine(
        &self,
        alpha: Complex64,
        other: &OperatorMatrix,
        beta: Complex64,
    ) -> Result<Self> {
        if other.dim != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: other.dim,
            });
        }
        Ok(Self {
            dim: self.dim,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| alpha * a + beta * b)
                .collect(),
        })
    }
}

pub fn sample_initial(kind: EnsembleKind, dim: usize, seed: SeedSpec) -> Result<OperatorMatrix> {
    if dim < 2 {
        return Err(Error::InvalidParameter(format!(
            "operator dimension must be at least 2, got {dim}"
        )));
    }
    let mut rng = seed.rng();
    let mut o = OperatorMatrix::zeros(dim);
    let c = |re: f64, im: f64| Complex64::new(re, im);
    for m in 0..dim {
        for n in m..dim {
            let diag = m == n;
            let v = match kind {
                EnsembleKind::Goe if diag => c(gauss(&mut rng), 0.0),
                EnsembleKind::Goe => c(FRAC_1_SQRT2 * gauss(&mut rng), 0.0),
                EnsembleKind::Gue if diag => c(gauss(&mut rng), 0.0),
                EnsembleKind::Gue => {
                    let re = FRAC_1_SQRT2 * gauss(&mut rng);
                    let im = FRAC_1_SQRT2 * gauss(&mut rng);
                    c(re, im)
                }
                EnsembleKind::Ure => c(uniform(&mut rng), 0.0),
                EnsembleKind::Uim if diag => c(0.0, 0.0),
                EnsembleKind::Uim => c(0.0, uniform(&mut rng)),
                EnsembleKind::Ucp if diag => c(uniform(&mut rng), 0.0),
                EnsembleKind::Ucp => {
                    let re = uniform(&mut rng);
                    let im = uniform(&mut rng);
                    c(re, im)
                }
            };
            o.set(m, n, v);
            o.set(n, m, v.conj());
        }
    }
    Ok(o)
}

#[inline]
fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Uniform on the open interval (-√3, √3).
#[inline]
fn uniform(rng: &mut ChaCha8Rng) -> f64 {
    let u: f64 = rng.sample(Open01);
    SQRT3 * (2.0 * u - 1.0)
}
