//! Log-ratios of Lanczos coefficients, their variance, the zero-frequency mode
//! and sample-averaged correlation matrices.

use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{io_err, Error, Result};

/// Range of coefficients `b_{start+1} ..= b_end` used for statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub start: usize,
    pub end: usize,
}

impl WindowSpec {
    pub fn new(start: usize, end: usize) -> Result<Self> {
        let w = Self { start, end };
        w.validate()?;
        Ok(w)
    }

    /// `(5 N, 10 N)`, trimmed by one coefficient when `N` is odd.
    pub fn default_for(n_max: usize) -> Self {
        Self::even(5 * n_max, 10 * n_max)
    }

    /// `(10 N, 15 N)`, trimmed by one coefficient when `N` is odd.
    pub fn late_for(n_max: usize) -> Self {
        Self::even(10 * n_max, 15 * n_max)
    }

    fn even(start: usize, end: usize) -> Self {
        Self {
            start,
            end: end - (end - start) % 2,
        }
    }

    /// Same length, pairing shifted by one coefficient.
    pub fn shifted(&self) -> Self {
        Self {
            start: self.start + 1,
            end: self.end + 1,
        }
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of log-ratios.
    pub fn pairs(&self) -> usize {
        self.len() / 2
    }

    pub fn validate(&self) -> Result<()> {
        if self.end <= self.start {
            return Err(Error::InvalidParameter(format!("empty window {self}")));
        }
        if self.len() % 2 != 0 {
            return Err(Error::InvalidParameter(format!(
                "window {self} has odd length {}",
                self.len()
            )));
        }
        Ok(())
    }
}

impl fmt::Display for WindowSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.start, self.end)
    }
}

impl FromStr for WindowSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidParameter(format!("window must look like START:END, got {s:?}"));
        let (a, b) = s.trim().split_once([':', ',']).ok_or_else(bad)?;
        let start = a.trim().parse().map_err(|_| bad())?;
        let end = b.trim().parse().map_err(|_| bad())?;
        Self::new(start, end)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct XSeries {
    pub x: Vec<f64>,
}

impl XSeries {
    pub fn new(x: Vec<f64>) -> Self {
        Self { x }
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }
}

/// `x_i = ln(b_{w+2i-1} / b_{w+2i})` for `i = 1..=P`, `w = window.start`.
pub fn log_ratios(b: &[f64], window: WindowSpec) -> Result<XSeries> {
    window.validate()?;
    if window.end > b.len() {
        return Err(Error::WindowExceedsRun {
            start: window.start,
            end: window.end,
            needed: window.end,
            available: b.len(),
        });
    }
    let slice = &b[window.start..window.end];
    if let Some(i) = slice.iter().position(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(Error::ZeroCoefficient {
            index: window.start + i + 1,
        });
    }
    Ok(XSeries::new(
        slice.chunks_exact(2).map(|p| (p[0] / p[1]).ln()).collect(),
    ))
}

/// Population variance.
pub fn variance(x: &XSeries) -> Result<f64> {
    let p = require_pairs(x)?;
    let mean = x.x.iter().sum::<f64>() / p;
    Ok(x.x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / p)
}

/// `(diagonal, cross)` with `variance = diagonal - cross`, where
/// `diagonal = (1/p - 1/p^2) Σ x_i^2` and `cross = (1/p^2) Σ_{i≠j} x_i x_j`.
pub fn variance_decomposition(x: &XSeries) -> Result<(f64, f64)> {
    let p = require_pairs(x)?;
    let sum: f64 = x.x.iter().sum();
    let sum_sq: f64 = x.x.iter().map(|v| v * v).sum();
    let diag = (1.0 / p - 1.0 / (p * p)) * sum_sq;
    let cross = (sum * sum - sum_sq) / (p * p);
    Ok((diag, cross))
}

fn require_pairs(x: &XSeries) -> Result<f64> {
    if x.len() < 2 {
        return Err(Error::InvalidParameter(format!(
            "need at least 2 log-ratios, got {}",
            x.len()
        )));
    }
    Ok(x.len() as f64)
}

/// Even-site amplitudes of the zero-frequency eigenvector of the chain.
#[derive(Debug, Clone, PartialEq)]
pub struct ZeroMode {
    /// `ψ_0, ψ_2, ...`
    pub psi_even: Vec<f64>,
    /// `ln|ψ_{2n}|`, kept separately so long chains do not under- or overflow.
    pub log_abs: Vec<f64>,
}

impl ZeroMode {
    /// `ψ_0 = 1` and `ψ_{2n} = -ψ_{2n-2} b_{2n-1} / b_{2n}`.
    pub fn from_coefficients(b: &[f64]) -> Result<Self> {
        if let Some(i) = b.iter().position(|v| !(v.is_finite() && *v != 0.0)) {
            return Err(Error::ZeroCoefficient { index: i + 1 });
        }
        let mut log_abs = vec![0.0];
        let mut psi_even = vec![1.0];
        for pair in b.chunks_exact(2) {
            let ratio = pair[0] / pair[1];
            log_abs.push(log_abs[log_abs.len() - 1] + ratio.abs().ln());
            psi_even.push(-psi_even[psi_even.len() - 1] * ratio);
        }
        Ok(Self { psi_even, log_abs })
    }

    /// Rescaled to unit Euclidean norm over the even sites.
    pub fn normalized(&self) -> Self {
        let top = self
            .log_abs
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = self.log_abs.iter().map(|l| (2.0 * (l - top)).exp()).sum();
        let log_norm = top + 0.5 * sum.ln();
        let log_abs: Vec<f64> = self.log_abs.iter().map(|l| l - log_norm).collect();
        let psi_even = self
            .psi_even
            .iter()
            .zip(&log_abs)
            .map(|(p, l)| p.signum() * l.exp())
            .collect();
        Self { psi_even, log_abs }
    }

    pub fn len(&self) -> usize {
        self.psi_even.len()
    }

    pub fn is_empty(&self) -> bool {
        self.psi_even.is_empty()
    }

    fn has_zero(&self) -> bool {
        self.psi_even.iter().any(|p| *p == 0.0) || self.log_abs.iter().any(|l| !l.is_finite())
    }
}

pub fn zero_mode(b: &[f64]) -> Result<ZeroMode> {
    ZeroMode::from_coefficients(b)
}

/// Running sums of `x x^T` and `ln|ψ_{2m} ψ_{2n}|` over samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationAccumulator {
    pairs: usize,
    n_samples: usize,
    n_psi: usize,
    excluded_psi: usize,
    sum_xx: Vec<f64>,
    sum_logpsi: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrices {
    pub n_samples: usize,
    pub n_psi: usize,
    pub excluded_psi: usize,
    /// `⟨x_i x_j⟩`, `P x P`.
    pub xx: Vec<Vec<f64>>,
    /// `⟨ln|ψ_{2m} ψ_{2n}|⟩`, `(P+1) x (P+1)` including `ψ_0`.
    pub logpsi: Vec<Vec<f64>>,
}

impl CorrelationAccumulator {
    pub fn new(pairs: usize) -> Self {
        let sites = pairs + 1;
        Self {
            pairs,
            n_samples: 0,
            n_psi: 0,
            excluded_psi: 0,
            sum_xx: vec![0.0; pairs * pairs],
            sum_logpsi: vec![0.0; sites * sites],
        }
    }

    pub fn pairs(&self) -> usize {
        self.pairs
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn excluded_psi(&self) -> usize {
        self.excluded_psi
    }

    /// Adds one sample. A zero mode with an exact zero or non-finite log is
    /// left out of the `ψ` sums and counted.
    pub fn accumulate(&mut self, x: &XSeries, psi: &ZeroMode) -> Result<()> {
        if x.len() != self.pairs {
            return Err(Error::DimensionMismatch {
                expected: self.pairs,
                found: x.len(),
            });
        }
        if psi.len() != self.pairs + 1 {
            return Err(Error::DimensionMismatch {
                expected: self.pairs + 1,
                found: psi.len(),
            });
        }
        let p = self.pairs;
        for i in 0..p {
            for j in i..p {
                self.sum_xx[i * p + j] += x.x[i] * x.x[j];
            }
        }
        self.n_samples += 1;
        if psi.has_zero() {
            self.excluded_psi += 1;
            return Ok(());
        }
        let s = p + 1;
        for m in 0..s {
            for n in m..s {
                self.sum_logpsi[m * s + n] += psi.log_abs[m] + psi.log_abs[n];
            }
        }
        self.n_psi += 1;
        Ok(())
    }

    pub fn merge(&mut self, other: &Self) -> Result<()> {
        if other.pairs != self.pairs {
            return Err(Error::DimensionMismatch {
                expected: self.pairs,
                found: other.pairs,
            });
        }
        for (a, b) in self.sum_xx.iter_mut().zip(&other.sum_xx) {
            *a += b;
        }
        for (a, b) in self.sum_logpsi.iter_mut().zip(&other.sum_logpsi) {
            *a += b;
        }
        self.n_samples += other.n_samples;
        self.n_psi += other.n_psi;
        self.excluded_psi += other.excluded_psi;
        Ok(())
    }

    /// Averages; the lower triangle is a copy of the upper so the result is
    /// exactly symmetric.
    pub fn finalize(&self) -> Result<CorrelationMatrices> {
        if self.n_samples == 0 {
            return Err(Error::DegenerateSample("no samples accumulated".into()));
        }
        let xx = symmetric_mean(&self.sum_xx, self.pairs, self.n_samples);
        let logpsi = if self.n_psi == 0 {
            vec![vec![f64::NAN; self.pairs + 1]; self.pairs + 1]
        } else {
            symmetric_mean(&self.sum_logpsi, self.pairs + 1, self.n_psi)
        };
        Ok(CorrelationMatrices {
            n_samples: self.n_samples,
            n_psi: self.n_psi,
            excluded_psi: self.excluded_psi,
            xx,
            logpsi,
        })
    }
}

fn symmetric_mean(upper: &[f64], side: usize, count: usize) -> Vec<Vec<f64>> {
    let n = count as f64;
    let mut out = vec![vec![0.0; side]; side];
    for i in 0..side {
        for j in i..side {
            let v = upper[i * side + j] / n;
            out[i][j] = v;
            out[j][i] = v;
        }
    }
    out
}

/// Context written on the first line of a matrix CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixHeader {
    pub n_samples: usize,
    pub window: WindowSpec,
    pub ensemble: String,
    pub a: f64,
    pub n_max: usize,
}

impl fmt::Display for MatrixHeader {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "# N={} window={} ensemble={} a={:?} N_max={}",
            self.n_samples, self.window, self.ensemble, self.a, self.n_max
        )
    }
}

impl FromStr for MatrixHeader {
    type Err = Error;

    fn from_str(line: &str) -> Result<Self> {
        let bad = |why: &str| Error::InvalidParameter(format!("matrix header {line:?}: {why}"));
        let body = line.strip_prefix('#').ok_or_else(|| bad("missing '#'"))?;
        let mut n_samples = None;
        let mut window = None;
        let mut ensemble = None;
        let mut a = None;
        let mut n_max = None;
        for field in body.split_whitespace() {
            let (key, value) = field
                .split_once('=')
                .ok_or_else(|| bad("field without '='"))?;
            match key {
                "N" => n_samples = value.parse().ok(),
                "window" => window = value.parse().ok(),
                "ensemble" => ensemble = Some(value.to_string()),
                "a" => a = value.parse().ok(),
                "N_max" => n_max = value.parse().ok(),
                _ => return Err(bad("unknown field")),
            }
        }
        Ok(Self {
            n_samples: n_samples.ok_or_else(|| bad("N"))?,
            window: window.ok_or_else(|| bad("window"))?,
            ensemble: ensemble.ok_or_else(|| bad("ensemble"))?,
            a: a.ok_or_else(|| bad("a"))?,
            n_max: n_max.ok_or_else(|| bad("N_max"))?,
        })
    }
}

pub fn format_matrix_csv(header: &MatrixHeader, matrix: &[Vec<f64>]) -> String {
    let mut out = format!("{header}\n");
    for row in matrix {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

pub fn write_matrix_csv(path: &Path, header: &MatrixHeader, matrix: &[Vec<f64>]) -> Result<()> {
    let mut file = fs::File::create(path).map_err(io_err(path))?;
    file.write_all(format_matrix_csv(header, matrix).as_bytes())
        .map_err(io_err(path))
}

pub fn read_matrix_csv(path: &Path) -> Result<(MatrixHeader, Vec<Vec<f64>>)> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let malformed = |reason: String| Error::Malformed {
        path: path.to_path_buf(),
        reason,
    };
    let mut lines = text.lines();
    let header: MatrixHeader = lines
        .next()
        .ok_or_else(|| malformed("empty file".into()))?
        .parse()
        .map_err(|e: Error| malformed(e.to_string()))?;
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let row: std::result::Result<Vec<f64>, _> =
            line.split(',').map(|c| c.trim().parse::<f64>()).collect();
        rows.push(row.map_err(|e| malformed(format!("row {}: {e}", i + 1)))?);
    }
    if rows.iter().any(|r| r.len() != rows.len()) {
        return Err(malformed("matrix is not square".into()));
    }
    Ok((header, rows))
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal, StandardNormal};
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    use super::*;

    fn xs(v: &[f64]) -> XSeries {
        XSeries::new(v.to_vec())
    }

    #[test]
    fn log_ratio_examples() {
        let r = log_ratios(&[2.0; 10], WindowSpec::new(2, 8).unwrap()).unwrap();
        assert_eq!(r.x, vec![0.0; 3]);
        let e = std::f64::consts::E;
        let r = log_ratios(&[e, 1.0, e, 1.0], WindowSpec::new(0, 4).unwrap()).unwrap();
        assert_eq!(r.x, vec![1.0, 1.0]);
    }

    #[test]
    fn log_ratios_match_direct_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let b: Vec<f64> = (0..20)
            .map(|_| rand::Rng::random_range(&mut rng, 0.1..5.0))
            .collect();
        let window = WindowSpec::new(1, 7).unwrap();
        let got = log_ratios(&b, window).unwrap();
        // x_i = ln(b_{w+2i-1}/b_{w+2i}) with 1-based b
        let oracle: Vec<f64> = (1..=3)
            .map(|i| (b[1 + 2 * i - 2] / b[1 + 2 * i - 1]).ln())
            .collect();
        assert_eq!(got.x, oracle);
    }

    #[test]
    fn window_errors() {
        assert!(WindowSpec::new(1, 6).is_err());
        assert!(WindowSpec::new(5, 5).is_err());
        let err = log_ratios(&[1.0; 10], WindowSpec::new(4, 12).unwrap()).unwrap_err();
        assert!(matches!(
            err,
            Error::WindowExceedsRun {
                available: 10,
                needed: 12,
                ..
            }
        ));
        let err = log_ratios(&[1.0, 0.0, 1.0, 1.0], WindowSpec::new(0, 4).unwrap()).unwrap_err();
        assert!(matches!(err, Error::ZeroCoefficient { index: 2 }));
        assert_eq!(
            "250:500".parse::<WindowSpec>().unwrap(),
            WindowSpec::default_for(50)
        );
        assert_eq!(
            WindowSpec::default_for(50).shifted(),
            WindowSpec::new(251, 501).unwrap()
        );
    }

    #[test]
    fn variance_examples() {
        assert_eq!(variance(&xs(&[0.0; 5])).unwrap(), 0.0);
        assert_eq!(variance(&xs(&[1.0, -1.0])).unwrap(), 1.0);
        assert_eq!(
            variance_decomposition(&xs(&[1.0, -1.0])).unwrap(),
            (0.5, -0.5)
        );
        let (d, c) = variance_decomposition(&xs(&[1.0; 8])).unwrap();
        assert!((d - c).abs() < 1e-15);
        assert!(variance(&xs(&[1.0])).is_err());
        assert!(variance_decomposition(&xs(&[])).is_err());
    }

    #[test]
    fn cross_term_is_small_for_independent_normals() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let trials = 1000;
        let mut small = 0;
        for _ in 0..trials {
            let x: Vec<f64> = (0..250).map(|_| StandardNormal.sample(&mut rng)).collect();
            let (d, c) = variance_decomposition(&XSeries::new(x)).unwrap();
            if c.abs() < d.abs() / 10.0 {
                small += 1;
            }
        }
        assert!(small >= 950, "{small}/{trials}");
    }

    #[test]
    fn zero_mode_examples() {
        assert_eq!(zero_mode(&[1.0; 4]).unwrap().psi_even, vec![1.0, -1.0, 1.0]);
        assert_eq!(zero_mode(&[2.0, 1.0]).unwrap().psi_even, vec![1.0, -2.0]);
        assert!(matches!(
            zero_mode(&[1.0, 0.0]),
            Err(Error::ZeroCoefficient { index: 2 })
        ));
    }

    #[test]
    fn zero_mode_normalization() {
        let z = zero_mode(&[3.0, 1.0, 0.5, 2.0, 1.5, 1.0]).unwrap();
        let u = z.normalized();
        let norm: f64 = u.psi_even.iter().map(|p| p * p).sum();
        assert!((norm - 1.0).abs() < 1e-14);
        for (a, b) in z.psi_even.iter().zip(&u.psi_even) {
            assert!((a / b - z.psi_even[0] / u.psi_even[0]).abs() < 1e-12);
        }
    }

    #[test]
    fn accumulator_examples() {
        let psi = |n| ZeroMode {
            psi_even: vec![1.0; n],
            log_abs: vec![0.0; n],
        };
        let mut acc = CorrelationAccumulator::new(2);
        acc.accumulate(&xs(&[1.0, 2.0]), &psi(3)).unwrap();
        assert_eq!(
            acc.finalize().unwrap().xx,
            vec![vec![1.0, 2.0], vec![2.0, 4.0]]
        );

        let mut acc = CorrelationAccumulator::new(2);
        acc.accumulate(&xs(&[1.0, 0.0]), &psi(3)).unwrap();
        acc.accumulate(&xs(&[0.0, 1.0]), &psi(3)).unwrap();
        assert_eq!(
            acc.finalize().unwrap().xx,
            vec![vec![0.5, 0.0], vec![0.0, 0.5]]
        );

        assert!(matches!(
            acc.accumulate(&xs(&[1.0]), &psi(3)),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(
            acc.accumulate(&xs(&[1.0, 1.0]), &psi(2)),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn zero_psi_is_excluded_and_counted() {
        let mut acc = CorrelationAccumulator::new(1);
        let good = zero_mode(&[2.0, 1.0]).unwrap();
        let underflow = ZeroMode {
            psi_even: vec![1.0, 0.0],
            log_abs: vec![0.0, f64::NEG_INFINITY],
        };
        acc.accumulate(&xs(&[1.0]), &good).unwrap();
        acc.accumulate(&xs(&[3.0]), &underflow).unwrap();
        let m = acc.finalize().unwrap();
        assert_eq!((m.n_samples, m.n_psi, m.excluded_psi), (2, 1, 1));
        assert_eq!(m.xx[0][0], 5.0);
        assert!((m.logpsi[1][1] - 2.0 * 2f64.ln()).abs() < 1e-15);
        assert_eq!(m.logpsi[0][1], m.logpsi[1][0]);
    }

    #[test]
    fn estimator_converges_to_true_covariance() {
        let sd = [0.5, 1.0, 2.0];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 10_000;
        let mut acc = CorrelationAccumulator::new(3);
        let psi = ZeroMode {
            psi_even: vec![1.0; 4],
            log_abs: vec![0.0; 4],
        };
        for _ in 0..n {
            let x: Vec<f64> = sd
                .iter()
                .map(|s| Normal::new(0.0, *s).unwrap().sample(&mut rng))
                .collect();
            acc.accumulate(&XSeries::new(x), &psi).unwrap();
        }
        let m = acc.finalize().unwrap();
        for (i, s) in sd.iter().enumerate() {
            let truth = s * s;
            // Var(x^2) = 2 s^4 for a centred normal
            let se = (2.0f64).sqrt() * truth / (n as f64).sqrt();
            assert!(
                (m.xx[i][i] - truth).abs() < 3.0 * se,
                "{i}: {} vs {truth}",
                m.xx[i][i]
            );
        }
    }

    #[test]
    fn single_component_scatter_is_chi_square() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (n, trials) = (20usize, 2000);
        let psi = ZeroMode {
            psi_even: vec![1.0; 2],
            log_abs: vec![0.0; 2],
        };
        let mut scatter: Vec<f64> = (0..trials)
            .map(|_| {
                let mut acc = CorrelationAccumulator::new(1);
                for _ in 0..n {
                    acc.accumulate(&XSeries::new(vec![StandardNormal.sample(&mut rng)]), &psi)
                        .unwrap();
                }
                n as f64 * acc.finalize().unwrap().xx[0][0]
            })
            .collect();
        scatter.sort_by(f64::total_cmp);
        let chi = ChiSquared::new(n as f64).unwrap();
        let m = scatter.len() as f64;
        let d = scatter
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let f = chi.cdf(v);
                (f - i as f64 / m).max((i + 1) as f64 / m - f)
            })
            .fold(0.0, f64::max);
        // asymptotic 1% critical value
        assert!(d < 1.628 / m.sqrt(), "D = {d}");
    }

    #[test]
    fn matrix_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("xx.csv");
        let header = MatrixHeader {
            n_samples: 12,
            window: WindowSpec::default_for(5),
            ensemble: "GUE".into(),
            a: 0.1,
            n_max: 5,
        };
        let matrix = vec![vec![0.1 + 0.2, -1e-300], vec![-1e-300, 7.0]];
        write_matrix_csv(&path, &header, &matrix).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(
            text.lines().next().unwrap(),
            "# N=12 window=25:49 ensemble=GUE a=0.1 N_max=5"
        );
        assert_eq!(read_matrix_csv(&path).unwrap(), (header, matrix));
    }

    proptest! {
        #[test]
        fn variance_is_shift_invariant_and_decomposes(
            x in prop::collection::vec(-10.0f64..10.0, 2..100),
            c in -50.0f64..50.0,
        ) {
            let base = variance(&xs(&x)).unwrap();
            let shifted: Vec<f64> = x.iter().map(|v| v + c).collect();
            prop_assert!((variance(&xs(&shifted)).unwrap() - base).abs() < 1e-9);
            let (d, cross) = variance_decomposition(&xs(&x)).unwrap();
            prop_assert!((d - cross - base).abs() < 1e-12 * (1.0 + d.abs()) * 100.0);
        }

        #[test]
        fn zero_mode_annihilated_by_chain(b in prop::collection::vec(0.1f64..10.0, 2..40)) {
            let z = zero_mode(&b).unwrap();
            for n in 0..z.len() - 1 {
                let r = b[2 * n] * z.psi_even[n] + b[2 * n + 1] * z.psi_even[n + 1];
                prop_assert!(r.abs() <= 1e-12 * b[2 * n] * z.psi_even[n].abs());
                prop_assert!(z.psi_even[n].signum() != z.psi_even[n + 1].signum());
            }
        }

        #[test]
        fn merge_matches_sequential(xs_all in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 3), 2..30), split in 0usize..30) {
            let psi = ZeroMode { psi_even: vec![1.0, -0.5, 2.0, 1.0], log_abs: vec![0.0, -(2f64.ln()), 2f64.ln(), 0.0] };
            let split = split % xs_all.len();
            let mut all = CorrelationAccumulator::new(3);
            let (mut left, mut right) = (CorrelationAccumulator::new(3), CorrelationAccumulator::new(3));
            for (i, x) in xs_all.iter().enumerate() {
                let x = XSeries::new(x.clone());
                all.accumulate(&x, &psi).unwrap();
                if i < split { left.accumulate(&x, &psi).unwrap() } else { right.accumulate(&x, &psi).unwrap() }
            }
            left.merge(&right).unwrap();
            let (a, b) = (all.finalize().unwrap(), left.finalize().unwrap());
            for (ra, rb) in a.xx.iter().zip(&b.xx) {
                for (u, v) in ra.iter().zip(rb) {
                    prop_assert!((u - v).abs() <= 1e-10 * (1.0 + u.abs()));
                }
            }
            for i in 0..3 { for j in 0..3 { prop_assert_eq!(b.xx[i][j], b.xx[j][i]); } }
        }
    }
}
