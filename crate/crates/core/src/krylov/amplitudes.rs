//! Wavefunction on the Krylov chain.
//!
//! The hopping equation `φ'_n = b_n φ_{n-1} - b_{n+1} φ_{n+1}` becomes
//! `ψ' = i J ψ` for `ψ_n = i^n φ_n`, where `J` is the symmetric tridiagonal
//! matrix with off-diagonal `b`. The propagator is applied through the
//! eigendecomposition of `J`, so every stored time is exact up to roundoff
//! rather than integrated step by step.

use faer::{Mat, Side};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct WaveAmplitudes {
    pub t_grid: Vec<f64>,
    /// `phi[t][n]` for chain sites `n = 0..=T`.
    pub phi: Vec<Vec<f64>>,
}

impl WaveAmplitudes {
    pub fn sites(&self) -> usize {
        self.phi.first().map_or(0, Vec::len)
    }

    /// `Σ_n φ_n(t)^2` at each stored time.
    pub fn norms(&self) -> Vec<f64> {
        self.phi
            .iter()
            .map(|row| row.iter().map(|p| p * p).sum())
            .collect()
    }
}

pub fn evolve_amplitudes(b: &[f64], t_grid: &[f64]) -> Result<WaveAmplitudes> {
    if let Some(step) = b.iter().position(|x| !x.is_finite()) {
        return Err(Error::NonFinite { step: step + 1 });
    }
    if let Some(index) = b.iter().position(|&x| x <= 0.0) {
        return Err(Error::ZeroCoefficient { index: index + 1 });
    }
    if t_grid.is_empty() {
        return Err(Error::InvalidParameter("empty time grid".into()));
    }
    if t_grid.iter().any(|t| !t.is_finite())
        || t_grid[0] < 0.0
        || t_grid.windows(2).any(|w| w[1] < w[0])
    {
        return Err(Error::InvalidParameter(
            "time grid must be finite, non-negative and ascending".into(),
        ));
    }

    let sites = b.len() + 1;
    let mut hopping = Mat::<f64>::zeros(sites, sites);
    for (n, &bn) in b.iter().enumerate() {
        hopping[(n, n + 1)] = bn;
        hopping[(n + 1, n)] = bn;
    }
    let evd = hopping
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::LinearAlgebra(format!("chain eigensolver: {e:?}")))?;
    let lambda = evd.S().column_vector();
    let u = evd.U();
    let lambda: Vec<f64> = (0..sites).map(|k| lambda[k]).collect();
    // weight of each mode in the initial state e_0
    let overlap: Vec<f64> = (0..sites).map(|k| u[(0, k)]).collect();

    let mut phi = Vec::with_capacity(t_grid.len());
    let mut cos = vec![0.0; sites];
    let mut sin = vec![0.0; sites];
    for &t in t_grid {
        let mut row = vec![0.0; sites];
        if t == 0.0 {
            row[0] = 1.0;
            phi.push(row);
            continue;
        }
        for k in 0..sites {
            let (s, c) = (lambda[k] * t).sin_cos();
            cos[k] = c * overlap[k];
            sin[k] = s * overlap[k];
        }
        for (n, out) in row.iter_mut().enumerate() {
            let mut re = 0.0;
            let mut im = 0.0;
            for k in 0..sites {
                let un = u[(n, k)];
                re += un * cos[k];
                im += un * sin[k];
            }
            // φ_n = Re(i^{-n} ψ_n)
            *out = match n % 4 {
                0 => re,
                1 => im,
                2 => -re,
                _ => -im,
            };
        }
        phi.push(row);
    }
    Ok(WaveAmplitudes {
        t_grid: t_grid.to_vec(),
        phi,
    })
}

/// Mean chain position `Σ_n n φ_n(t)^2` at each stored time.
pub fn k_complexity(amps: &WaveAmplitudes) -> Vec<f64> {
    amps.phi
        .iter()
        .map(|row| row.iter().enumerate().map(|(n, p)| n as f64 * p * p).sum())
        .collect()
}
