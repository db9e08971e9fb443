//! Lanczos recursion for the Liouvillian in the energy basis.
//!
//! Two engines run the same recurrence:
//!
//! * [`Engine::Operator`] stores every Krylov element as a full complex
//!   `N x N` matrix. It is the literal algorithm and the only one that can
//!   return the basis.
//! * [`Engine::Measure`] uses the fact that every Krylov element is an
//!   elementwise polynomial in `E_mn` times `O0_mn`. The recursion then only
//!   sees the weights `|O0_mn|^2` placed at the gaps `E_mn`. For Hermitian
//!   `O0` that measure is even, so it is folded onto the distinct
//!   non-negative gaps and the element of step `n` is stored as an even or odd
//!   function. Vectors shrink from `N^2` complex entries to roughly `N^2/2`
//!   reals and opposite-parity overlaps vanish identically.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::billiard::Spectrum;
use crate::ensembles::OperatorMatrix;
use crate::error::{io_err, Error, Result};

pub const DEFAULT_BREAKDOWN_TOL: f64 = 1e-12;

/// Second Gram-Schmidt pass is skipped when a pass kept this much of the norm.
const DGKS_KEEP: f64 = std::f64::consts::FRAC_1_SQRT_2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "mode", content = "threshold")]
pub enum Reorthogonalization {
    None,
    Full,
    /// Estimate orthogonality loss with the Simon recurrence and reorthogonalize
    /// when the estimate exceeds the threshold.
    Partial(f64),
}

impl std::fmt::Display for Reorthogonalization {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::None => f.write_str("none"),
            Self::Full => f.write_str("full"),
            Self::Partial(t) => write!(f, "partial:{t:e}"),
        }
    }
}

impl std::str::FromStr for Reorthogonalization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        match lower.as_str() {
            "none" => Ok(Self::None),
            "full" => Ok(Self::Full),
            "partial" => Ok(Self::Partial(f64::EPSILON.sqrt())),
            other => {
                let t = other
                    .strip_prefix("partial:")
                    .and_then(|t| t.parse::<f64>().ok())
                    .filter(|t| t.is_finite() && *t > 0.0)
                    .ok_or_else(|| {
                        Error::InvalidParameter(format!("unknown reorthogonalization mode {s:?}"))
                    })?;
                Ok(Self::Partial(t))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Engine {
    Operator,
    #[default]
    Measure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LanczosConfig {
    pub max_steps: usize,
    pub reorth: Reorthogonalization,
    /// Relative to `b_1`; `b_1` itself is compared against the spectral width.
    pub breakdown_tol: f64,
    /// Forces the operator engine.
    pub store_basis: bool,
    pub engine: Engine,
}

impl LanczosConfig {
    /// Ten steps per level.
    pub fn for_levels(n_max: usize) -> Self {
        Self {
            max_steps: 10 * n_max.max(1),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_steps == 0 {
            return Err(Error::InvalidParameter(
                "max_steps must be at least 1".into(),
            ));
        }
        if !(self.breakdown_tol.is_finite() && self.breakdown_tol > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "breakdown_tol must be positive, got {}",
                self.breakdown_tol
            )));
        }
        if let Reorthogonalization::Partial(t) = self.reorth {
            if !(t.is_finite() && t > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "partial reorthogonalization threshold {t}"
                )));
            }
        }
        Ok(())
    }
}

impl Default for LanczosConfig {
    fn default() -> Self {
        Self {
            max_steps: 100,
            reorth: Reorthogonalization::Full,
            breakdown_tol: DEFAULT_BREAKDOWN_TOL,
            store_basis: false,
            engine: Engine::Measure,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LanczosResult {
    /// `b_1 ..= b_T`.
    pub b: Vec<f64>,
    pub terminated_at: usize,
    pub breakdown: bool,
    /// `O_0 ..= O_T` when requested.
    pub basis: Option<Vec<OperatorMatrix>>,
}

impl LanczosResult {
    /// Number of Krylov elements produced, `T + 1`. Equals the Krylov
    /// dimension when the run ended in breakdown.
    pub fn krylov_dim(&self) -> usize {
        self.b.len() + 1
    }
}

pub fn lanczos(
    spectrum: &Spectrum,
    o0: &OperatorMatrix,
    cfg: &LanczosConfig,
) -> Result<LanczosResult> {
    cfg.validate()?;
    let dim = spectrum.n_max();
    if o0.dim() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: o0.dim(),
        });
    }
    if o0
        .as_slice()
        .iter()
        .any(|z| !(z.re.is_finite() && z.im.is_finite()))
    {
        return Err(Error::NonFinite { step: 0 });
    }
    if o0.as_slice().iter().all(|z| z.norm_sqr() == 0.0) {
        return Err(Error::ZeroOperator);
    }

    let use_operator = cfg.store_basis || cfg.engine == Engine::Operator || !o0.is_hermitian();
    if use_operator {
        let space = OperatorSpace::new(spectrum, o0);
        let (b, breakdown, basis) = run_lanczos(&space, cfg)?;
        let basis = cfg.store_basis.then(|| {
            basis
                .into_iter()
                .map(|v| OperatorMatrix::from_fn(dim, |m, n| v[m * dim + n]))
                .collect()
        });
        Ok(LanczosResult {
            terminated_at: b.len(),
            b,
            breakdown,
            basis,
        })
    } else {
        let space = SpectralMeasure::from_operator(spectrum, o0)?;
        let (b, breakdown, _) = run_lanczos(&space, cfg)?;
        Ok(LanczosResult {
            terminated_at: b.len(),
            b,
            breakdown,
            basis: None,
        })
    }
}

/// Inner-product space on which the Liouvillian recursion runs.
trait KrylovSpace {
    type Vector: Clone;

    /// Normalized starting element.
    fn start(&self) -> Self::Vector;
    fn apply_into(&self, v: &Self::Vector, out: &mut Self::Vector);
    /// `w -= c q` for a real `c`.
    fn sub_scaled(&self, w: &mut Self::Vector, c: f64, q: &Self::Vector);
    /// `w -= (q|w) q`.
    fn project_out(&self, w: &mut Self::Vector, q: &Self::Vector);
    fn norm(&self, v: &Self::Vector) -> f64;
    fn scale(&self, v: &mut Self::Vector, c: f64);
    /// Largest `|E_mn|`, the scale for the first breakdown test.
    fn spectral_radius(&self) -> f64;
    /// Elements of opposite step parity are exactly orthogonal.
    fn same_parity_only(&self) -> bool;
    /// Exact dimension of the Krylov space: the number of distinct
    /// Liouvillian eigenvalues carrying weight.
    fn krylov_bound(&self) -> usize;
    fn is_finite(&self, v: &Self::Vector) -> bool;
}

fn run_lanczos<S: KrylovSpace>(
    space: &S,
    cfg: &LanczosConfig,
) -> Result<(Vec<f64>, bool, Vec<S::Vector>)> {
    let keep_all = cfg.store_basis || cfg.reorth != Reorthogonalization::None;
    let mut basis: Vec<S::Vector> = vec![space.start()];
    let mut b: Vec<f64> = Vec::new();
    let mut breakdown = false;
    let mut pro = match cfg.reorth {
        Reorthogonalization::Partial(threshold) => Some(OrthogonalityEstimate::new(
            threshold,
            space.spectral_radius(),
        )),
        _ => None,
    };
    let mut work = space.start();

    for n in 1..=cfg.max_steps {
        // roundoff outside the Krylov space can outgrow the tolerance test
        if n >= space.krylov_bound() {
            breakdown = true;
            break;
        }
        let last = basis.len() - 1;
        space.apply_into(&basis[last], &mut work);
        if n >= 2 {
            space.sub_scaled(&mut work, b[n - 2], &basis[last - 1]);
        }

        if cfg.reorth == Reorthogonalization::Full {
            reorthogonalize(space, &mut work, &basis, n);
        }

        let mut bn = space.norm(&work);
        if let Some(est) = pro.as_mut() {
            if est.needs_reorth(&b, bn, space.same_parity_only()) {
                reorthogonalize(space, &mut work, &basis, n);
                bn = space.norm(&work);
                est.reset();
            }
        }

        if !bn.is_finite() || !space.is_finite(&work) {
            return Err(Error::NonFinite { step: n });
        }
        let threshold = if n == 1 {
            cfg.breakdown_tol * space.spectral_radius()
        } else {
            cfg.breakdown_tol * b[0]
        };
        if bn <= threshold {
            breakdown = true;
            break;
        }
        space.scale(&mut work, 1.0 / bn);
        b.push(bn);
        if let Some(est) = pro.as_mut() {
            est.commit();
        }
        if keep_all {
            basis.push(work.clone());
        } else {
            if basis.len() == 2 {
                basis.remove(0);
            }
            basis.push(work.clone());
        }
    }
    Ok((b, breakdown, basis))
}

/// Orthogonalizes the candidate for step `n` against the stored elements,
/// with a second pass only when the first removed a large component.
fn reorthogonalize<S: KrylovSpace>(space: &S, w: &mut S::Vector, basis: &[S::Vector], n: usize) {
    let parity_only = space.same_parity_only();
    for pass in 0..2 {
        let before = space.norm(w);
        for (j, q) in basis.iter().enumerate() {
            if parity_only && (n - j) % 2 == 1 {
                continue;
            }
            space.project_out(w, q);
        }
        if pass == 0 && space.norm(w) >= DGKS_KEEP * before {
            break;
        }
    }
}

/// Simon's recurrence for the overlaps `(O_k|O_j)` accumulated by roundoff.
/// The recursion has no diagonal coefficients, so only the `b` terms enter.
struct OrthogonalityEstimate {
    threshold: f64,
    radius: f64,
    /// `prev[j]` estimates `(O_{k-1}|O_j)` and `curr[j]` estimates `(O_k|O_j)`.
    prev: Vec<f64>,
    curr: Vec<f64>,
    next: Vec<f64>,
    force_next: bool,
    forced: bool,
}

impl OrthogonalityEstimate {
    fn new(threshold: f64, radius: f64) -> Self {
        Self {
            threshold,
            radius,
            prev: Vec::new(),
            curr: vec![1.0],
            next: Vec::new(),
            force_next: false,
            forced: false,
        }
    }

    /// Predicts overlaps of the candidate `O_{k+1}` (norm `bn`) and reports
    /// whether they exceed the threshold.
    fn needs_reorth(&mut self, b: &[f64], bn: f64, parity_only: bool) -> bool {
        let k = self.curr.len() - 1;
        let eps = f64::EPSILON;
        let floor = eps * self.radius.max(f64::MIN_POSITIVE) / bn.max(f64::MIN_POSITIVE);
        self.next = vec![0.0; k + 2];
        self.next[k + 1] = 1.0;
        if k >= 1 {
            self.next[k] = eps;
        }
        for j in 0..k {
            if parity_only && (k + 1 - j) % 2 == 1 {
                continue;
            }
            // b[i] holds b_{i+1}
            let up = b[j] * self.curr[j + 1];
            let down = if j >= 1 {
                b[j - 1] * self.curr[j - 1]
            } else {
                0.0
            };
            let back = if k >= 1 {
                b[k - 1] * self.prev.get(j).copied().unwrap_or(0.0)
            } else {
                0.0
            };
            let raw = (up + down - back) / bn;
            self.next[j] = raw + floor.copysign(raw);
        }
        let worst = self.next[..k].iter().fold(0.0f64, |m, w| m.max(w.abs()));
        self.forced = std::mem::take(&mut self.force_next);
        self.forced || worst > self.threshold
    }

    fn reset(&mut self) {
        let k = self.next.len() - 2;
        for w in &mut self.next[..k] {
            *w = f64::EPSILON;
        }
        // The step after a triggered one is reorthogonalized too, otherwise
        // the loss against the corrected element reappears immediately.
        self.force_next = !self.forced;
    }

    fn commit(&mut self) {
        self.prev = std::mem::take(&mut self.curr);
        self.curr = std::mem::take(&mut self.next);
    }
}

/// Neumaier-compensated sum.
fn compensated_sum(terms: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut c = 0.0f64;
    for x in terms {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            c += (sum - t) + x;
        } else {
            c += (x - t) + sum;
        }
        sum = t;
    }
    sum + c
}

struct OperatorSpace {
    gaps: Vec<f64>,
    start: Vec<Complex64>,
    radius: f64,
    bound: usize,
}

impl OperatorSpace {
    fn new(spectrum: &Spectrum, o0: &OperatorMatrix) -> Self {
        let dim = spectrum.n_max();
        let gaps: Vec<f64> = (0..dim * dim)
            .map(|k| spectrum.gap(k / dim, k % dim))
            .collect();
        let e = spectrum.energies();
        let radius = e[e.len() - 1] - e[0];
        let norm = o0.norm();
        let start: Vec<Complex64> = o0.as_slice().iter().map(|z| z / norm).collect();
        let mut supported: Vec<f64> = gaps
            .iter()
            .zip(&start)
            .filter(|(_, z)| z.norm_sqr() > 0.0)
            .map(|(g, _)| *g)
            .collect();
        supported.sort_by(f64::total_cmp);
        supported.dedup();
        Self {
            bound: supported.len(),
            gaps,
            start,
            radius,
        }
    }
}

impl KrylovSpace for OperatorSpace {
    type Vector = Vec<Complex64>;

    fn start(&self) -> Self::Vector {
        self.start.clone()
    }

    fn apply_into(&self, v: &Self::Vector, out: &mut Self::Vector) {
        out.clear();
        out.extend(v.iter().zip(&self.gaps).map(|(z, g)| z * g));
    }

    fn sub_scaled(&self, w: &mut Self::Vector, c: f64, q: &Self::Vector) {
        for (wi, qi) in w.iter_mut().zip(q) {
            *wi -= qi * c;
        }
    }

    fn project_out(&self, w: &mut Self::Vector, q: &Self::Vector) {
        let c: Complex64 = q.iter().zip(w.iter()).map(|(a, b)| a.conj() * b).sum();
        for (wi, qi) in w.iter_mut().zip(q) {
            *wi -= c * qi;
        }
    }

    fn norm(&self, v: &Self::Vector) -> f64 {
        compensated_sum(v.iter().map(|z| z.norm_sqr())).sqrt()
    }

    fn scale(&self, v: &mut Self::Vector, c: f64) {
        for z in v {
            *z *= c;
        }
    }

    fn spectral_radius(&self) -> f64 {
        self.radius
    }

    fn same_parity_only(&self) -> bool {
        false
    }

    fn krylov_bound(&self) -> usize {
        self.bound
    }

    fn is_finite(&self, v: &Self::Vector) -> bool {
        v.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }
}

/// Weights `|O0_mn|^2` folded onto the distinct gaps `|E_m - E_n|`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralMeasure {
    nodes: Vec<f64>,
    weights: Vec<f64>,
    start: Vec<f64>,
    radius: f64,
}

impl SpectralMeasure {
    /// Requires a Hermitian operator so the unfolded measure is even.
    pub fn from_operator(spectrum: &Spectrum, o0: &OperatorMatrix) -> Result<Self> {
        let dim = spectrum.n_max();
        if o0.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: o0.dim(),
            });
        }
        if !o0.is_hermitian() {
            return Err(Error::InvalidParameter(
                "folded measure needs a Hermitian operator".into(),
            ));
        }
        let e = spectrum.energies();
        let mut pairs: Vec<(f64, f64)> = Vec::with_capacity(dim * (dim + 1) / 2);
        for m in 0..dim {
            pairs.push((0.0, o0.get(m, m).norm_sqr()));
            for n in m + 1..dim {
                pairs.push((e[n] - e[m], 2.0 * o0.get(m, n).norm_sqr()));
            }
        }
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut nodes: Vec<f64> = Vec::new();
        let mut weights: Vec<f64> = Vec::new();
        for (x, w) in pairs {
            if w == 0.0 {
                continue;
            }
            match nodes.last() {
                Some(&last) if last == x => *weights.last_mut().unwrap() += w,
                _ => {
                    nodes.push(x);
                    weights.push(w);
                }
            }
        }
        let total = compensated_sum(weights.iter().copied());
        if total == 0.0 {
            return Err(Error::ZeroOperator);
        }
        let start = vec![1.0 / total.sqrt(); nodes.len()];
        Ok(Self {
            nodes,
            weights,
            start,
            radius: e[e.len() - 1] - e[0],
        })
    }

    /// Distinct non-negative gaps carrying weight.
    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn total_weight(&self) -> f64 {
        compensated_sum(self.weights.iter().copied())
    }

    fn dot(&self, a: &[f64], b: &[f64]) -> f64 {
        self.weights
            .iter()
            .zip(a)
            .zip(b)
            .map(|((w, x), y)| w * x * y)
            .sum()
    }
}

impl KrylovSpace for SpectralMeasure {
    type Vector = Vec<f64>;

    fn start(&self) -> Self::Vector {
        self.start.clone()
    }

    fn apply_into(&self, v: &Self::Vector, out: &mut Self::Vector) {
        out.clear();
        out.extend(v.iter().zip(&self.nodes).map(|(f, x)| f * x));
    }

    fn sub_scaled(&self, w: &mut Self::Vector, c: f64, q: &Self::Vector) {
        for (wi, qi) in w.iter_mut().zip(q) {
            *wi -= c * qi;
        }
    }

    fn project_out(&self, w: &mut Self::Vector, q: &Self::Vector) {
        let c = self.dot(q, w);
        for (wi, qi) in w.iter_mut().zip(q) {
            *wi -= c * qi;
        }
    }

    fn norm(&self, v: &Self::Vector) -> f64 {
        compensated_sum(self.weights.iter().zip(v).map(|(w, f)| w * f * f)).sqrt()
    }

    fn scale(&self, v: &mut Self::Vector, c: f64) {
        for f in v {
            *f *= c;
        }
    }

    fn spectral_radius(&self) -> f64 {
        self.radius
    }

    fn same_parity_only(&self) -> bool {
        true
    }

    fn krylov_bound(&self) -> usize {
        // each positive node stands for the pair of eigenvalues +-gap
        let positive = self.nodes.iter().filter(|&&x| x > 0.0).count();
        2 * positive + usize::from(positive < self.nodes.len())
    }

    fn is_finite(&self, v: &Self::Vector) -> bool {
        v.iter().all(|f| f.is_finite())
    }
}

/// One `n b_n` line per step.
pub fn format_coefficients(b: &[f64]) -> String {
    let mut out = String::new();
    for (i, bn) in b.iter().enumerate() {
        let _ = writeln!(out, "{} {:?}", i + 1, bn);
    }
    out
}

pub fn write_coefficients(b: &[f64], path: &Path) -> Result<()> {
    let mut file = std::fs::File::create(path).map_err(io_err(path))?;
    file.write_all(format_coefficients(b).as_bytes())
        .map_err(io_err(path))
}

#[cfg(test)]
mod tests {
    use num_complex::Complex64;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::ensembles::{sample_initial, EnsembleKind, SeedSpec};

    /// Householder tridiagonalization of the dense `N^2 x N^2` Liouvillian
    /// after a reflection that makes `vec(O0)` the first basis vector. No
    /// Krylov recurrence is involved; `b_{k+1}` is the norm of column `k` below
    /// the diagonal when column `k` is reached.
    fn dense_oracle(energies: &[f64], o0: &OperatorMatrix) -> Vec<f64> {
        let dim = energies.len();
        let n = dim * dim;
        let norm = o0.norm();
        let v: Vec<Complex64> = o0.as_slice().iter().map(|z| z / norm).collect();

        let mut a = vec![vec![Complex64::new(0.0, 0.0); n]; n];
        for (k, row) in a.iter_mut().enumerate() {
            row[k] = Complex64::new(energies[k / dim] - energies[k % dim], 0.0);
        }

        // H0 = I - 2 u u^H / |u|^2 with H0 v = alpha e_0
        let phase = if v[0].norm() > 0.0 {
            v[0] / v[0].norm()
        } else {
            Complex64::new(1.0, 0.0)
        };
        let mut u = v.clone();
        u[0] += phase;
        reflect_both(&mut a, &u, 0);

        let mut b = Vec::new();
        for k in 0..n - 1 {
            let col: Vec<Complex64> = (k + 1..n).map(|i| a[i][k]).collect();
            let len = col.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            b.push(len);
            if len == 0.0 {
                continue;
            }
            let phase = if col[0].norm() > 0.0 {
                col[0] / col[0].norm()
            } else {
                Complex64::new(1.0, 0.0)
            };
            let mut u = vec![Complex64::new(0.0, 0.0); n];
            for (i, z) in col.iter().enumerate() {
                u[k + 1 + i] = *z;
            }
            u[k + 1] += phase * len;
            reflect_both(&mut a, &u, k + 1);
        }
        b
    }

    /// `A <- H A H` for the Householder reflector built from `u`, whose
    /// entries before `from` are zero.
    fn reflect_both(a: &mut [Vec<Complex64>], u: &[Complex64], from: usize) {
        let n = a.len();
        let uu: f64 = u.iter().map(|z| z.norm_sqr()).sum();
        if uu == 0.0 {
            return;
        }
        let tau = 2.0 / uu;
        // rows: A <- A - tau u (u^H A)
        for j in 0..n {
            let s: Complex64 = (from..n).map(|i| u[i].conj() * a[i][j]).sum();
            for i in from..n {
                a[i][j] -= u[i] * s * tau;
            }
        }
        // columns: A <- A - tau (A u) u^H
        for row in a.iter_mut() {
            let s: Complex64 = (from..n).map(|j| row[j] * u[j]).sum();
            for j in from..n {
                row[j] -= s * u[j].conj() * tau;
            }
        }
    }

    fn random_spectrum(rng: &mut ChaCha8Rng, dim: usize) -> Spectrum {
        let mut e: Vec<f64> = (0..dim).map(|_| rng.random_range(0.0..10.0)).collect();
        e.sort_by(f64::total_cmp);
        Spectrum::from_energies(e).unwrap()
    }

    fn config(engine: Engine) -> LanczosConfig {
        LanczosConfig {
            max_steps: 200,
            engine,
            ..LanczosConfig::default()
        }
    }

    #[test]
    fn two_level_chain() {
        let e = 3.25;
        let s = Spectrum::from_energies(vec![0.0, e]).unwrap();
        let o = OperatorMatrix::from_real_rows(&[&[0.0, 1.0], &[1.0, 0.0]]).unwrap();
        for engine in [Engine::Operator, Engine::Measure] {
            let r = lanczos(&s, &o, &config(engine)).unwrap();
            assert_eq!(r.b, vec![e]);
            assert!(r.breakdown);
            assert_eq!(r.krylov_dim(), 2);
        }
        assert_eq!(dense_oracle(&[0.0, e], &o)[0], e);
    }

    #[test]
    fn diagonal_start_breaks_down_immediately() {
        let s = Spectrum::from_energies(vec![0.1, 0.7, 2.0]).unwrap();
        let o = OperatorMatrix::from_real_rows(&[
            &[1.0, 0.0, 0.0],
            &[0.0, 2.0, 0.0],
            &[0.0, 0.0, -1.0],
        ])
        .unwrap();
        for engine in [Engine::Operator, Engine::Measure] {
            let r = lanczos(&s, &o, &config(engine)).unwrap();
            assert!(r.b.is_empty());
            assert!(r.breakdown);
            assert_eq!(r.terminated_at, 0);
        }
    }

    #[test]
    fn rejects_bad_input() {
        let s = Spectrum::from_energies(vec![0.0, 1.0]).unwrap();
        let cfg = LanczosConfig::default();
        assert!(matches!(
            lanczos(&s, &OperatorMatrix::zeros(2), &cfg),
            Err(Error::ZeroOperator)
        ));
        assert!(matches!(
            lanczos(&s, &OperatorMatrix::zeros(3), &cfg),
            Err(Error::DimensionMismatch { .. })
        ));
        let mut bad = OperatorMatrix::zeros(2);
        bad.set(0, 1, Complex64::new(f64::NAN, 0.0));
        assert!(matches!(
            lanczos(&s, &bad, &cfg),
            Err(Error::NonFinite { step: 0 })
        ));
        let o = OperatorMatrix::from_real_rows(&[&[0.0, 1.0], &[1.0, 0.0]]).unwrap();
        for cfg in [
            LanczosConfig {
                max_steps: 0,
                ..LanczosConfig::default()
            },
            LanczosConfig {
                breakdown_tol: 0.0,
                ..LanczosConfig::default()
            },
        ] {
            assert!(matches!(
                lanczos(&s, &o, &cfg),
                Err(Error::InvalidParameter(_))
            ));
        }
    }

    #[test]
    fn overflow_reports_step() {
        let s = Spectrum::from_energies(vec![0.0, 1e300, 1.5e308]).unwrap();
        let o = OperatorMatrix::from_fn(3, |_, _| Complex64::new(1.0, 0.0));
        let err = lanczos(&s, &o, &config(Engine::Operator)).unwrap_err();
        assert!(
            matches!(err, Error::NonFinite { step } if step >= 1),
            "{err:?}"
        );
    }

    #[test]
    fn matches_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for dim in 2..=8 {
            for kind in EnsembleKind::ALL {
                let s = random_spectrum(&mut rng, dim);
                let o = sample_initial(kind, dim, SeedSpec::new(5, dim as u64)).unwrap();
                let oracle = dense_oracle(s.energies(), &o);
                for engine in [Engine::Operator, Engine::Measure] {
                    let r = lanczos(&s, &o, &config(engine)).unwrap();
                    assert!(r.breakdown);
                    for (i, (x, y)) in r.b.iter().zip(&oracle).enumerate() {
                        assert!(
                            (x - y).abs() <= 1e-8 * y,
                            "{kind} N={dim} {engine:?} b_{}: {x} vs {y}",
                            i + 1
                        );
                    }
                    let next = oracle[r.b.len()];
                    assert!(
                        next <= 1e-9 * r.b[0],
                        "{kind} N={dim}: missed step with b = {next}"
                    );
                }
            }
        }
    }

    #[test]
    fn engines_agree_on_long_runs() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = random_spectrum(&mut rng, 20);
        let o = sample_initial(EnsembleKind::Gue, 20, SeedSpec::new(1, 0)).unwrap();
        let steps = |engine| LanczosConfig {
            max_steps: 1000,
            ..config(engine)
        };
        let a = lanczos(&s, &o, &steps(Engine::Operator)).unwrap();
        let b = lanczos(&s, &o, &steps(Engine::Measure)).unwrap();
        assert_eq!(a.b.len(), b.b.len());
        assert_eq!(a.b.len(), 2 * 190);
        for (x, y) in a.b.iter().zip(&b.b) {
            assert!((x - y).abs() <= 1e-9 * y, "{x} vs {y}");
        }
    }

    #[test]
    fn stored_basis_is_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let s = random_spectrum(&mut rng, 6);
        let o = sample_initial(EnsembleKind::Goe, 6, SeedSpec::new(2, 0)).unwrap();
        let cfg = LanczosConfig {
            store_basis: true,
            ..config(Engine::Measure)
        };
        let r = lanczos(&s, &o, &cfg).unwrap();
        let basis = r.basis.as_ref().unwrap();
        assert_eq!(basis.len(), r.krylov_dim());
        for (i, x) in basis.iter().enumerate() {
            for (j, y) in basis.iter().enumerate() {
                let target = if i == j { 1.0 } else { 0.0 };
                assert!((x.inner(y) - target).norm() < 1e-8, "({i}|{j})");
            }
        }
    }

    #[test]
    fn stops_at_exact_dimension_with_repeated_gaps() {
        // nine distinct positive gaps, so 18 coefficients; roundoff used to
        // carry the operator engine past the end
        let s = Spectrum::from_energies(vec![0.0, 2.0, 4.0, 5.0, 7.0, 9.0, 11.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(404);
        for i in 0..200 {
            let o = sample_initial(EnsembleKind::ALL[i % 5], 7, SeedSpec::new(rng.random(), 0))
                .unwrap();
            let measure = lanczos(&s, &o, &config(Engine::Measure)).unwrap();
            let operator = lanczos(&s, &o, &config(Engine::Operator)).unwrap();
            let expected = if EnsembleKind::ALL[i % 5] == EnsembleKind::Uim {
                18
            } else {
                19
            };
            assert_eq!(measure.krylov_dim(), expected);
            assert_eq!(operator.krylov_dim(), expected);
            assert!(measure.breakdown && operator.breakdown);
        }
    }

    #[test]
    fn lemma_invariants_on_stored_basis() {
        let dim = 7;
        // degenerate gaps: equally spaced levels
        let s = Spectrum::from_energies((0..dim).map(|k| k as f64).collect()).unwrap();
        let mut o = sample_initial(EnsembleKind::Gue, dim, SeedSpec::new(9, 0)).unwrap();
        for (m, n) in [(0, 3), (2, 5), (1, 1)] {
            o.set(m, n, Complex64::new(0.0, 0.0));
            o.set(n, m, Complex64::new(0.0, 0.0));
        }
        let cfg = LanczosConfig {
            store_basis: true,
            ..config(Engine::Operator)
        };
        let r = lanczos(&s, &o, &cfg).unwrap();
        let basis = r.basis.unwrap();
        assert!(basis.len() > 4);
        for ok in &basis {
            for m in 0..dim {
                for n in 0..dim {
                    if o.get(m, n) == Complex64::new(0.0, 0.0) {
                        assert_eq!(ok.get(m, n), Complex64::new(0.0, 0.0));
                    }
                }
            }
            // equal gap E_mn = 1 on the first superdiagonal
            let reference = ok.get(0, 1) / o.get(0, 1);
            for m in 1..dim - 1 {
                let ratio = ok.get(m, m + 1) / o.get(m, m + 1);
                assert!(
                    (ratio - reference).norm() <= 1e-10 * reference.norm().max(1.0),
                    "{ratio} vs {reference}"
                );
            }
        }
    }

    #[test]
    fn partial_and_none_track_full_early_on() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let s = random_spectrum(&mut rng, 30);
        let o = sample_initial(EnsembleKind::Goe, 30, SeedSpec::new(1, 1)).unwrap();
        let full = lanczos(&s, &o, &config(Engine::Measure)).unwrap();
        for reorth in [
            Reorthogonalization::Partial(f64::EPSILON.sqrt()),
            Reorthogonalization::None,
        ] {
            let cfg = LanczosConfig {
                reorth,
                ..config(Engine::Measure)
            };
            let r = lanczos(&s, &o, &cfg).unwrap();
            for (x, y) in r.b.iter().zip(&full.b).take(20) {
                assert!((x - y).abs() <= 1e-8 * y, "{reorth}: {x} vs {y}");
            }
        }
        let cfg = LanczosConfig {
            reorth: Reorthogonalization::Partial(f64::EPSILON.sqrt()),
            ..config(Engine::Measure)
        };
        let partial = lanczos(&s, &o, &cfg).unwrap();
        let agree = partial
            .b
            .iter()
            .zip(&full.b)
            .take(150)
            .filter(|(x, y)| (*x - *y).abs() <= 1e-6 * *y)
            .count();
        assert!(
            agree >= 140,
            "partial reorthogonalization drifted: {agree}/150"
        );
    }

    #[test]
    fn max_steps_caps_the_run() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let s = random_spectrum(&mut rng, 10);
        let o = sample_initial(EnsembleKind::Ure, 10, SeedSpec::new(0, 0)).unwrap();
        let cfg = LanczosConfig {
            max_steps: 7,
            ..LanczosConfig::default()
        };
        let r = lanczos(&s, &o, &cfg).unwrap();
        assert_eq!(r.terminated_at, 7);
        assert!(!r.breakdown);
    }

    #[test]
    fn coefficient_dump_round_trips() {
        let b = [1.0, 0.1 + 0.2, 1e-300];
        let text = format_coefficients(&b);
        let parsed: Vec<f64> = text
            .lines()
            .map(|l| l.split_once(' ').unwrap().1.parse().unwrap())
            .collect();
        assert_eq!(parsed, b);
        assert!(text.starts_with("1 1.0\n2 "));
    }

    #[test]
    fn reorth_parses() {
        assert_eq!(
            "full".parse::<Reorthogonalization>().unwrap(),
            Reorthogonalization::Full
        );
        assert_eq!(
            "None".parse::<Reorthogonalization>().unwrap(),
            Reorthogonalization::None
        );
        assert_eq!(
            "partial:1e-6".parse::<Reorthogonalization>().unwrap(),
            Reorthogonalization::Partial(1e-6)
        );
        assert!("partial:-1".parse::<Reorthogonalization>().is_err());
        let p = Reorthogonalization::Partial(1e-6);
        assert_eq!(p.to_string().parse::<Reorthogonalization>().unwrap(), p);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn scaling_laws(seed in 0u64..1000, dim in 3usize..9, c in 0.01f64..100.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = random_spectrum(&mut rng, dim);
            let o = sample_initial(EnsembleKind::Goe, dim, SeedSpec::new(seed, 0)).unwrap();
            let cfg = config(Engine::Measure);
            let base = lanczos(&s, &o, &cfg).unwrap();
            let energy_scaled = lanczos(&s.scaled(c).unwrap(), &o, &cfg).unwrap();
            let op_scaled = lanczos(&s, &o.scaled(c), &cfg).unwrap();
            prop_assert_eq!(base.b.len(), energy_scaled.b.len());
            prop_assert_eq!(base.b.len(), op_scaled.b.len());
            for ((x, y), z) in base.b.iter().zip(&energy_scaled.b).zip(&op_scaled.b) {
                prop_assert!((y - c * x).abs() <= 1e-9 * c * x);
                prop_assert!((z - x).abs() <= 1e-9 * x);
            }
        }

        #[test]
        fn coefficients_stay_above_tolerance(seed in 0u64..1000, dim in 2usize..12) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = random_spectrum(&mut rng, dim);
            let o = sample_initial(EnsembleKind::Ucp, dim, SeedSpec::new(seed, 1)).unwrap();
            let cfg = config(Engine::Measure);
            let r = lanczos(&s, &o, &cfg).unwrap();
            prop_assert!(r.b.iter().all(|&x| x > cfg.breakdown_tol * r.b[0]));
        }
    }
}
