//! Histograms, normal and rescaled chi-square fits, sample moments and the
//! Kolmogorov-Smirnov test.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Gamma, Normal};
use statrs::function::gamma::digamma;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinRule {
    #[default]
    FreedmanDiaconis,
    Sqrt,
    Fixed(usize),
}

impl fmt::Display for BinRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::FreedmanDiaconis => f.write_str("fd"),
            Self::Sqrt => f.write_str("sqrt"),
            Self::Fixed(n) => write!(f, "{n}"),
        }
    }
}

impl FromStr for BinRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "fd" | "freedman-diaconis" | "freedman_diaconis" => Ok(Self::FreedmanDiaconis),
            "sqrt" => Ok(Self::Sqrt),
            other => other
                .parse::<usize>()
                .ok()
                .filter(|n| *n > 0)
                .map(Self::Fixed)
                .ok_or_else(|| Error::InvalidParameter(format!("unknown bin rule {s:?}"))),
        }
    }
}

const MAX_BINS: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub total: u64,
}

impl Histogram {
    pub fn bins(&self) -> usize {
        self.counts.len()
    }

    pub fn centers(&self) -> Vec<f64> {
        self.edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }

    /// Counts normalized to a probability density.
    pub fn density(&self) -> Vec<f64> {
        self.edges
            .windows(2)
            .zip(&self.counts)
            .map(|(w, &c)| c as f64 / (self.total as f64 * (w[1] - w[0])))
            .collect()
    }
}

/// Equal-width bins spanning `[min, max]`; the top edge is inclusive.
pub fn histogram(samples: &[f64], rule: BinRule) -> Result<Histogram> {
    check_finite(samples)?;
    let (lo, hi) = min_max(samples);
    if samples.len() < 2 || lo == hi {
        return Err(Error::DegenerateSample(
            "histogram needs at least two distinct values".into(),
        ));
    }
    let n = samples.len() as f64;
    let range = hi - lo;
    let sqrt_bins = n.sqrt().ceil() as usize;
    let bins = match rule {
        BinRule::Fixed(b) if b == 0 => return Err(Error::InvalidParameter("zero bins".into())),
        BinRule::Fixed(b) => b,
        BinRule::Sqrt => sqrt_bins,
        BinRule::FreedmanDiaconis => {
            let mut sorted = samples.to_vec();
            sorted.sort_by(f64::total_cmp);
            let iqr = quantile(&sorted, 0.75) - quantile(&sorted, 0.25);
            if iqr > 0.0 {
                (range / (2.0 * iqr * n.powf(-1.0 / 3.0))).ceil() as usize
            } else {
                sqrt_bins
            }
        }
    }
    .clamp(1, MAX_BINS);

    let width = range / bins as f64;
    let mut edges: Vec<f64> = (0..=bins).map(|i| lo + i as f64 * width).collect();
    edges[bins] = hi;
    let mut counts = vec![0u64; bins];
    for &v in samples {
        let idx = (((v - lo) / width) as usize).min(bins - 1);
        counts[idx] += 1;
    }
    Ok(Histogram {
        edges,
        counts,
        total: samples.len() as u64,
    })
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if i + 1 < sorted.len() {
        sorted[i] + frac * (sorted[i + 1] - sorted[i])
    } else {
        sorted[i]
    }
}

fn min_max(samples: &[f64]) -> (f64, f64) {
    samples
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
            (a.min(v), b.max(v))
        })
}

fn check_finite(samples: &[f64]) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::DegenerateSample("no samples".into()));
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::DegenerateSample("non-finite sample".into()));
    }
    Ok(())
}

fn mean_and_population_variance(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalFit {
    pub mu0: f64,
    pub sigma0: f64,
}

impl NormalFit {
    pub fn cdf(&self, x: f64) -> f64 {
        Normal::new(self.mu0, self.sigma0).map_or(f64::NAN, |d| d.cdf(x))
    }

    pub fn pdf(&self, x: f64) -> f64 {
        let z = (x - self.mu0) / self.sigma0;
        (-0.5 * z * z).exp() / (self.sigma0 * (2.0 * std::f64::consts::PI).sqrt())
    }
}

/// Maximum likelihood: sample mean and population standard deviation.
pub fn fit_normal(samples: &[f64]) -> Result<NormalFit> {
    check_finite(samples)?;
    if samples.len() < 2 {
        return Err(Error::DegenerateSample(
            "normal fit needs at least two samples".into(),
        ));
    }
    let (mu0, var) = mean_and_population_variance(samples);
    if var <= 0.0 {
        return Err(Error::DegenerateSample("zero variance".into()));
    }
    Ok(NormalFit {
        mu0,
        sigma0: var.sqrt(),
    })
}

/// Least-squares fit of the normal density to histogram bin densities,
/// started from the maximum-likelihood values.
pub fn fit_normal_histogram(samples: &[f64], rule: BinRule) -> Result<NormalFit> {
    let start = fit_normal(samples)?;
    let hist = histogram(samples, rule)?;
    let centers = hist.centers();
    let density = hist.density();
    // parameters (mu, ln sigma) keep sigma positive
    let residuals = |p: [f64; 2]| -> Vec<f64> {
        let fit = NormalFit {
            mu0: p[0],
            sigma0: p[1].exp(),
        };
        centers
            .iter()
            .zip(&density)
            .map(|(x, d)| fit.pdf(*x) - d)
            .collect()
    };
    let p = levenberg_marquardt(residuals, [start.mu0, start.sigma0.ln()], start.sigma0)?;
    Ok(NormalFit {
        mu0: p[0],
        sigma0: p[1].exp(),
    })
}

/// Two-parameter Levenberg-Marquardt with forward-difference Jacobian.
fn levenberg_marquardt(
    f: impl Fn([f64; 2]) -> Vec<f64>,
    start: [f64; 2],
    scale: f64,
) -> Result<[f64; 2]> {
    let cost = |r: &[f64]| r.iter().map(|v| v * v).sum::<f64>();
    let mut p = start;
    let mut r = f(p);
    let mut c = cost(&r);
    let mut lambda = 1e-3;
    let steps = [scale * 1e-7, 1e-7];
    for iteration in 0..200 {
        let mut jac = [vec![0.0; r.len()], vec![0.0; r.len()]];
        for k in 0..2 {
            let mut q = p;
            q[k] += steps[k];
            let rq = f(q);
            for i in 0..r.len() {
                jac[k][i] = (rq[i] - r[i]) / steps[k];
            }
        }
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let jtj = [
            [dot(&jac[0], &jac[0]), dot(&jac[0], &jac[1])],
            [dot(&jac[1], &jac[0]), dot(&jac[1], &jac[1])],
        ];
        let jtr = [dot(&jac[0], &r), dot(&jac[1], &r)];
        let mut improved = false;
        while lambda < 1e12 {
            let a = [
                [jtj[0][0] * (1.0 + lambda), jtj[0][1]],
                [jtj[1][0], jtj[1][1] * (1.0 + lambda)],
            ];
            let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
            if det == 0.0 || !det.is_finite() {
                lambda *= 10.0;
                continue;
            }
            let dp = [
                -(a[1][1] * jtr[0] - a[0][1] * jtr[1]) / det,
                -(a[0][0] * jtr[1] - a[1][0] * jtr[0]) / det,
            ];
            let q = [p[0] + dp[0], p[1] + dp[1]];
            let rq = f(q);
            let cq = cost(&rq);
            if cq.is_finite() && cq < c {
                let done = (c - cq) <= 1e-14 * c
                    || (dp[0].abs() <= 1e-12 * scale.max(p[0].abs()) && dp[1].abs() <= 1e-12);
                p = q;
                r = rq;
                c = cq;
                lambda = (lambda / 10.0).max(1e-12);
                improved = true;
                if done {
                    return Ok(p);
                }
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            // no descent direction left: converged to within roundoff
            return Ok(p);
        }
        if iteration == 199 {
            return Err(Error::NoConvergence {
                iterations: 200,
                residual: c,
            });
        }
    }
    Ok(p)
}

/// `σ² ~ c χ²_k`, i.e. a gamma law with shape `k/2` and scale `2c`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaledChiSquareFit {
    pub k: f64,
    pub c: f64,
}

impl ScaledChiSquareFit {
    pub fn cdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        Gamma::new(self.k / 2.0, 1.0 / (2.0 * self.c)).map_or(f64::NAN, |d| d.cdf(x))
    }
}

fn check_positive(samples: &[f64]) -> Result<(f64, f64)> {
    check_finite(samples)?;
    if samples.len() < 2 {
        return Err(Error::DegenerateSample(
            "chi-square fit needs at least two samples".into(),
        ));
    }
    if samples.iter().any(|v| *v <= 0.0) {
        return Err(Error::DegenerateSample(
            "chi-square fit needs positive samples".into(),
        ));
    }
    let (mean, var) = mean_and_population_variance(samples);
    if var <= 0.0 {
        return Err(Error::DegenerateSample("zero variance".into()));
    }
    Ok((mean, var))
}

/// Method of moments: `k = 2 m^2 / v`, `c = v / (2 m)`.
pub fn fit_scaled_chi_square(samples: &[f64]) -> Result<ScaledChiSquareFit> {
    let (mean, var) = check_positive(samples)?;
    Ok(ScaledChiSquareFit {
        k: 2.0 * mean * mean / var,
        c: var / (2.0 * mean),
    })
}

/// Gamma maximum likelihood, refined by Newton steps on the shape from the
/// moment estimate.
pub fn fit_scaled_chi_square_mle(samples: &[f64]) -> Result<ScaledChiSquareFit> {
    let start = fit_scaled_chi_square(samples)?;
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let mean_log = samples.iter().map(|v| v.ln()).sum::<f64>() / n;
    let s = mean.ln() - mean_log;
    if !(s > 0.0) {
        return Err(Error::DegenerateSample(
            "log-mean gap is not positive".into(),
        ));
    }
    let mut shape = start.k / 2.0;
    for iteration in 0..100 {
        let g = shape.ln() - digamma(shape) - s;
        let dg = 1.0 / shape - trigamma(shape);
        let mut next = shape - g / dg;
        if next <= 0.0 {
            next = shape / 2.0;
        }
        let converged = (next - shape).abs() <= 1e-12 * shape;
        shape = next;
        if converged {
            return Ok(ScaledChiSquareFit {
                k: 2.0 * shape,
                c: mean / (2.0 * shape),
            });
        }
        if iteration == 99 {
            return Err(Error::NoConvergence {
                iterations: 100,
                residual: g.abs(),
            });
        }
    }
    unreachable!()
}

/// Second derivative of `ln Γ`, by upward recurrence and the asymptotic series.
fn trigamma(x: f64) -> f64 {
    let mut x = x;
    let mut acc = 0.0;
    while x < 20.0 {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    acc + inv
        + 0.5 * inv2
        + inv * inv2 * (1.0 / 6.0 - inv2 * (1.0 / 30.0 - inv2 * (1.0 / 42.0 - inv2 / 30.0)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentsReport {
    pub mean: f64,
    pub variance: f64,
    pub skewness: f64,
    /// Non-excess: 3 for a normal law.
    pub kurtosis: f64,
}

pub fn moments(samples: &[f64]) -> Result<MomentsReport> {
    check_finite(samples)?;
    if samples.len() < 4 {
        return Err(Error::DegenerateSample(format!(
            "moments need 4 samples, got {}",
            samples.len()
        )));
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for v in samples {
        let d = v - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    let (m2, m3, m4) = (m2 / n, m3 / n, m4 / n);
    if m2 <= 0.0 {
        return Err(Error::DegenerateSample("zero variance".into()));
    }
    Ok(MomentsReport {
        mean,
        variance: m2,
        skewness: m3 / m2.powf(1.5),
        kurtosis: m4 / (m2 * m2),
    })
}

/// Below this many samples the asymptotic critical values are unreliable.
pub const KS_MIN_SAMPLES: usize = 35;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    pub n: usize,
    pub alpha: f64,
    pub critical: f64,
    pub p_value: f64,
    pub pass: bool,
    pub low_power: bool,
}

/// One-sample test against `cdf` with Stephens' small-sample correction
/// `λ = (√n + 0.12 + 0.11/√n) D`.
pub fn ks_statistic(samples: &[f64], cdf: impl Fn(f64) -> f64, alpha: f64) -> Result<KsResult> {
    check_finite(samples)?;
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "significance level {alpha} outside (0, 1)"
        )));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let m = sorted.len() as f64;
    let mut d = 0.0f64;
    for (i, &v) in sorted.iter().enumerate() {
        let f = cdf(v);
        if !f.is_finite() {
            return Err(Error::DegenerateSample(format!(
                "model cdf is not finite at {v}"
            )));
        }
        d = d.max(f - i as f64 / m).max((i + 1) as f64 / m - f);
    }
    let root = m.sqrt();
    let effective = root + 0.12 + 0.11 / root;
    let critical = (-0.5 * (alpha / 2.0).ln()).sqrt() / effective;
    let p_value = kolmogorov_survival(effective * d);
    Ok(KsResult {
        statistic: d,
        n: sorted.len(),
        alpha,
        critical,
        p_value,
        pass: d <= critical,
        low_power: sorted.len() < KS_MIN_SAMPLES,
    })
}

/// `P(K > λ)` for the Kolmogorov distribution.
fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for j in 1..=100 {
        let j = j as f64;
        let term = (-2.0 * j * j * lambda * lambda).exp();
        sum += if j as u64 % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitModel {
    Normal,
    NormalHistogram,
    ScaledChiSquare,
    ScaledChiSquareMle,
}

impl fmt::Display for FitModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Normal => "normal",
            Self::NormalHistogram => "normal_histogram",
            Self::ScaledChiSquare => "scaled_chi_square",
            Self::ScaledChiSquareMle => "scaled_chi_square_mle",
        })
    }
}

impl FromStr for FitModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "normal" => Ok(Self::Normal),
            "normal_histogram" => Ok(Self::NormalHistogram),
            "scaled_chi_square" | "chi2" => Ok(Self::ScaledChiSquare),
            "scaled_chi_square_mle" | "chi2_mle" => Ok(Self::ScaledChiSquareMle),
            _ => Err(Error::InvalidParameter(format!("unknown fit model {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub model: FitModel,
    pub params: BTreeMap<String, f64>,
    pub moments: MomentsReport,
    pub ks: KsResult,
    pub n_samples: usize,
}

pub const DEFAULT_ALPHA: f64 = 0.01;

pub fn fit_report(
    samples: &[f64],
    model: FitModel,
    rule: BinRule,
    alpha: f64,
) -> Result<FitReport> {
    let moments = moments(samples)?;
    let (params, ks) = match model {
        FitModel::Normal | FitModel::NormalHistogram => {
            let fit = if model == FitModel::Normal {
                fit_normal(samples)?
            } else {
                fit_normal_histogram(samples, rule)?
            };
            let ks = ks_statistic(samples, |x| fit.cdf(x), alpha)?;
            (
                BTreeMap::from([
                    ("mu0".to_string(), fit.mu0),
                    ("sigma0".to_string(), fit.sigma0),
                ]),
                ks,
            )
        }
        FitModel::ScaledChiSquare | FitModel::ScaledChiSquareMle => {
            let fit = if model == FitModel::ScaledChiSquare {
                fit_scaled_chi_square(samples)?
            } else {
                fit_scaled_chi_square_mle(samples)?
            };
            let ks = ks_statistic(samples, |x| fit.cdf(x), alpha)?;
            (
                BTreeMap::from([("k".to_string(), fit.k), ("c".to_string(), fit.c)]),
                ks,
            )
        }
    };
    Ok(FitReport {
        model,
        params,
        moments,
        ks,
        n_samples: samples.len(),
    })
}
