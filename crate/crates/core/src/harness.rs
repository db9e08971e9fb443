//! Experiment configuration, per-sample pipeline, sweeps and persisted records.
//!
//! A run directory holds, per ensemble `E`:
//!
//! * `sigma2-E.csv`: header `sample_index,sigma2`, one row per retained sample
//! * `xx-E.csv`, `logpsi-E.csv`: square matrices with a `# N=.. window=..` header
//! * `fits-E.json`: list of fit reports
//!
//! and a single `manifest.json` from which the run can be reproduced.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::billiard::{
    load_spectrum, BilliardKind, DiskPlacement, GridSpec, Spectrum, SpectrumCache, SpectrumRequest,
};
use crate::ensembles::{sample_initial, EnsembleKind, SeedSpec};
use crate::error::{io_err, Error, Result};
use crate::fitting::{fit_report, BinRule, FitModel, FitReport, DEFAULT_ALPHA};
use crate::krylov::{
    lanczos, write_coefficients, Engine, LanczosConfig, Reorthogonalization, DEFAULT_BREAKDOWN_TOL,
};
use crate::stats::{
    log_ratios, read_matrix_csv, variance, write_matrix_csv, zero_mode, CorrelationAccumulator,
    CorrelationMatrices, MatrixHeader, WindowSpec,
};

/// Largest tolerated fraction of samples whose run ends before the window.
pub const MAX_BREAKDOWN_FRACTION: f64 = 0.01;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpectrumSource {
    Grid(GridSpec),
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub kind: BilliardKind,
    pub a: f64,
    pub placement: DiskPlacement,
    pub n_max: usize,
    pub spectrum: SpectrumSource,
    pub ensembles: Vec<EnsembleKind>,
    pub samples: usize,
    /// `None` selects `(5 N, 10 N)`.
    pub window: Option<WindowSpec>,
    /// `None` selects `10 N`.
    pub max_steps: Option<usize>,
    pub reorth: Reorthogonalization,
    pub breakdown_tol: f64,
    pub engine: Engine,
    pub master_seed: u64,
    pub output: PathBuf,
    /// Zero disables the explicit pool and uses the global one.
    pub workers: usize,
    pub unit_norm_psi: bool,
    pub bins: BinRule,
    pub alpha: f64,
    pub dump_coefficients: bool,
}

impl RunConfig {
    pub fn new(kind: BilliardKind, a: f64, n_max: usize) -> Self {
        Self {
            kind,
            a,
            placement: DiskPlacement::default(),
            n_max,
            spectrum: SpectrumSource::Grid(GridSpec::Auto),
            ensembles: EnsembleKind::ALL.to_vec(),
            samples: 5000,
            window: None,
            max_steps: None,
            reorth: Reorthogonalization::Full,
            breakdown_tol: DEFAULT_BREAKDOWN_TOL,
            engine: Engine::Measure,
            master_seed: 0,
            output: PathBuf::from("krylov-run"),
            workers: 0,
            unit_norm_psi: false,
            bins: BinRule::default(),
            alpha: DEFAULT_ALPHA,
            dump_coefficients: false,
        }
    }

    pub fn window(&self) -> WindowSpec {
        self.window
            .unwrap_or_else(|| WindowSpec::default_for(self.n_max))
    }

    pub fn lanczos(&self) -> LanczosConfig {
        LanczosConfig {
            max_steps: self.max_steps.unwrap_or(10 * self.n_max),
            reorth: self.reorth,
            breakdown_tol: self.breakdown_tol,
            store_basis: false,
            engine: self.engine,
        }
    }

    pub fn spectrum_request(&self) -> Option<SpectrumRequest> {
        match self.spectrum {
            SpectrumSource::Grid(grid) => Some(SpectrumRequest {
                kind: self.kind,
                a: self.a,
                placement: self.placement,
                grid,
                n_max: self.n_max,
            }),
            SpectrumSource::File(_) => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if self.samples == 0 {
            return bad("sample count must be at least 1".into());
        }
        if self.n_max < 2 {
            return bad(format!("N_max must be at least 2, got {}", self.n_max));
        }
        if self.ensembles.is_empty() {
            return bad("no ensembles selected".into());
        }
        if !(self.a.is_finite() && (0.0..=1.0).contains(&self.a)) {
            return bad(format!("a must lie in [0, 1], got {}", self.a));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha must lie in (0, 1), got {}", self.alpha));
        }
        let window = self.window();
        window.validate()?;
        let lanczos = self.lanczos();
        lanczos.validate()?;
        if window.end > lanczos.max_steps {
            return bad(format!(
                "window end {} exceeds max_steps {}",
                window.end, lanczos.max_steps
            ));
        }
        Ok(())
    }

    /// Plain `key = value` lines; `#` starts a comment.
    pub fn from_kv(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::InvalidParameter(format!("line {}: expected key = value", lineno + 1))
            })?;
            pairs.push((key.trim().to_string(), value.trim().to_string()));
        }
        let mut config = Self::new(BilliardKind::Sinai, 1.0, 50);
        for (key, value) in &pairs {
            config.set(key, value)?;
        }
        Ok(config)
    }

    /// Applies one setting by its config-file key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::InvalidParameter(format!("bad value {value:?} for {key}")))
        }
        let auto = value.eq_ignore_ascii_case("auto");
        match key {
            "kind" => self.kind = value.parse()?,
            "a" => self.a = parse(key, value)?,
            "placement" => self.placement = value.parse()?,
            "n_max" => self.n_max = parse(key, value)?,
            "grid" => self.spectrum = SpectrumSource::Grid(value.parse()?),
            "spectrum_file" => self.spectrum = SpectrumSource::File(PathBuf::from(value)),
            "ensembles" => {
                self.ensembles = if auto || value.eq_ignore_ascii_case("all") {
                    EnsembleKind::ALL.to_vec()
                } else {
                    value
                        .split(',')
                        .map(|e| e.trim().parse())
                        .collect::<Result<_>>()?
                }
            }
            "samples" => self.samples = parse(key, value)?,
            "window" => self.window = if auto { None } else { Some(value.parse()?) },
            "max_steps" => self.max_steps = if auto { None } else { Some(parse(key, value)?) },
            "reorth" => self.reorth = value.parse()?,
            "breakdown_tol" => self.breakdown_tol = parse(key, value)?,
            "engine" => {
                self.engine = match value.to_ascii_lowercase().as_str() {
                    "measure" => Engine::Measure,
                    "operator" => Engine::Operator,
                    _ => return Err(Error::InvalidParameter(format!("unknown engine {value:?}"))),
                }
            }
            "seed" => self.master_seed = parse(key, value)?,
            "output" => self.output = PathBuf::from(value),
            "workers" => self.workers = parse(key, value)?,
            "unit_norm_psi" => self.unit_norm_psi = parse(key, value)?,
            "bins" => self.bins = value.parse()?,
            "alpha" => self.alpha = parse(key, value)?,
            "dump_coefficients" => self.dump_coefficients = parse(key, value)?,
            _ => {
                return Err(Error::InvalidParameter(format!(
                    "unknown config key {key:?}"
                )))
            }
        }
        Ok(())
    }

    /// Inverse of [`RunConfig::from_kv`].
    pub fn to_kv(&self) -> String {
        let ensembles: Vec<&str> = self.ensembles.iter().map(|e| e.as_str()).collect();
        let mut lines = vec![
            format!("kind = {}", self.kind),
            format!("a = {:?}", self.a),
            format!("placement = {}", self.placement),
            format!("n_max = {}", self.n_max),
        ];
        match &self.spectrum {
            SpectrumSource::Grid(g) => lines.push(format!("grid = {}", grid_text(g))),
            SpectrumSource::File(p) => lines.push(format!("spectrum_file = {}", p.display())),
        }
        lines.extend([
            format!("ensembles = {}", ensembles.join(",")),
            format!("samples = {}", self.samples),
            format!(
                "window = {}",
                self.window.map_or("auto".to_string(), |w| w.to_string())
            ),
            format!(
                "max_steps = {}",
                self.max_steps.map_or("auto".to_string(), |m| m.to_string())
            ),
            format!("reorth = {}", self.reorth),
            format!("breakdown_tol = {:?}", self.breakdown_tol),
            format!(
                "engine = {}",
                if self.engine == Engine::Measure {
                    "measure"
                } else {
                    "operator"
                }
            ),
            format!("seed = {}", self.master_seed),
            format!("output = {}", self.output.display()),
            format!("workers = {}", self.workers),
            format!("unit_norm_psi = {}", self.unit_norm_psi),
            format!("bins = {}", self.bins),
            format!("alpha = {:?}", self.alpha),
            format!("dump_coefficients = {}", self.dump_coefficients),
        ]);
        lines.join("\n") + "\n"
    }
}

fn grid_text(g: &GridSpec) -> String {
    match g {
        GridSpec::Auto => "auto".into(),
        GridSpec::Fixed(h) => format!("{h:?}"),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleSigma {
    pub index: u64,
    pub sigma2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleRecord {
    pub ensemble: EnsembleKind,
    pub samples: Vec<SampleSigma>,
    /// Indices whose run ended before the window.
    pub premature: Vec<u64>,
    pub matrices: CorrelationMatrices,
    pub fits: Vec<FitReport>,
    pub fit_errors: Vec<String>,
}

impl EnsembleRecord {
    pub fn sigma2(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.sigma2).collect()
    }

    pub fn summary(&self) -> Summary {
        Summary::of(&self.sigma2())
    }
}

/// Mean, population standard deviation and standard error of the mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    pub std: f64,
    pub sem: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self {
                n,
                mean: f64::NAN,
                std: f64::NAN,
                sem: f64::NAN,
            };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        Self {
            n,
            mean,
            std,
            sem: std / (n as f64).sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumInfo {
    pub key: Option<String>,
    pub h: Option<f64>,
    pub levels: usize,
    pub lowest: f64,
    pub highest: f64,
}

impl SpectrumInfo {
    fn of(spectrum: &Spectrum, key: Option<String>) -> Self {
        let e = spectrum.energies();
        Self {
            key,
            h: spectrum.provenance().origin().map(|o| o.h),
            levels: e.len(),
            lowest: e[0],
            highest: e[e.len() - 1],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: RunConfig,
    pub version: String,
    pub conventions: BTreeMap<String, String>,
    pub spectrum: SpectrumInfo,
    pub ensembles: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub ensemble: EnsembleKind,
    pub retained: usize,
    pub premature: Vec<u64>,
    pub excluded_psi: usize,
    pub summary: Summary,
    pub fit_errors: Vec<String>,
}

fn conventions() -> BTreeMap<String, String> {
    [
        ("geometry", "unit area; sinai disk radius a*L/2 at a vertex (or a*r_in/2 at the centroid); stadium quarter disk radius a*L"),
        ("window", "covers b_{start+1}..b_end; x_i pairs consecutive coefficients from the first one in the window"),
        ("sigma2", "population variance of x"),
        ("zero_mode", "psi_0 = 1 at the window start; log|psi| from cumulative x"),
        ("gue", "diagonal N(0,1); off-diagonal real and imaginary parts N(0,1/2)"),
        ("uniform", "entries U(-sqrt3, sqrt3), unit variance per real component"),
        ("kurtosis", "non-excess"),
        ("rng", "ChaCha8 seeded by ensemble-derived seed, stream = sample index"),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v.to_string()))
    .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub manifest: Manifest,
    pub ensembles: Vec<EnsembleRecord>,
}

impl RunRecord {
    pub fn ensemble(&self, kind: EnsembleKind) -> Option<&EnsembleRecord> {
        self.ensembles.iter().find(|e| e.ensemble == kind)
    }
}

/// Resolves the spectrum a config asks for, through the cache when it is solved.
pub fn resolve_spectrum(
    config: &RunConfig,
    cache: &SpectrumCache,
) -> Result<(Spectrum, Option<String>)> {
    match &config.spectrum {
        SpectrumSource::File(path) => Ok((load_spectrum(path, Some(config.n_max))?, None)),
        SpectrumSource::Grid(_) => {
            let req = config.spectrum_request().expect("grid source");
            Ok((cache.get_or_solve(&req)?, Some(req.key())))
        }
    }
}

/// Validates, resolves the spectrum, computes and writes the run directory.
pub fn run_experiment(config: &RunConfig, cache: &SpectrumCache) -> Result<RunRecord> {
    config.validate()?;
    let (spectrum, key) = resolve_spectrum(config, cache)?;
    let record = execute(config, &spectrum, key)?;
    write_record(&record, &config.output)?;
    if config.dump_coefficients {
        dump_coefficients(config, &spectrum)?;
    }
    Ok(record)
}

enum Outcome {
    Done {
        sigma2: f64,
        x: crate::stats::XSeries,
        psi: crate::stats::ZeroMode,
    },
    Premature {
        steps: usize,
    },
}

fn sample_outcome(
    config: &RunConfig,
    spectrum: &Spectrum,
    lanczos_cfg: &LanczosConfig,
    ensemble: EnsembleKind,
    index: u64,
) -> Result<Outcome> {
    let window = config.window();
    let seed = SeedSpec::new(ensemble.derive_seed(config.master_seed), index);
    let o0 = sample_initial(ensemble, config.n_max, seed)?;
    let run = lanczos(spectrum, &o0, lanczos_cfg)?;
    if run.b.len() < window.end {
        return Ok(Outcome::Premature { steps: run.b.len() });
    }
    let x = log_ratios(&run.b, window)?;
    let sigma2 = variance(&x)?;
    let mut psi = zero_mode(&run.b[window.start..window.end])?;
    if config.unit_norm_psi {
        psi = psi.normalized();
    }
    Ok(Outcome::Done { sigma2, x, psi })
}

fn in_pool<T: Send>(workers: usize, job: impl FnOnce() -> T + Send) -> Result<T> {
    if workers == 0 {
        return Ok(job());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;
    Ok(pool.install(job))
}

/// Computes every ensemble of a run without touching the filesystem.
/// Samples run in parallel; results are reduced in index order so the
/// output does not depend on the worker count.
pub fn execute(
    config: &RunConfig,
    spectrum: &Spectrum,
    spectrum_key: Option<String>,
) -> Result<RunRecord> {
    config.validate()?;
    if spectrum.n_max() != config.n_max {
        return Err(Error::LevelCountMismatch {
            expected: config.n_max,
            found: spectrum.n_max(),
        });
    }
    let lanczos_cfg = config.lanczos();
    let window = config.window();
    let mut ensembles = Vec::with_capacity(config.ensembles.len());
    for &ensemble in &config.ensembles {
        let outcomes: Vec<Result<Outcome>> = in_pool(config.workers, || {
            (0..config.samples as u64)
                .into_par_iter()
                .map(|i| sample_outcome(config, spectrum, &lanczos_cfg, ensemble, i))
                .collect()
        })?;

        let mut acc = CorrelationAccumulator::new(window.pairs());
        let mut samples = Vec::with_capacity(config.samples);
        let mut premature = Vec::new();
        let mut shortest = usize::MAX;
        for (index, outcome) in outcomes.into_iter().enumerate() {
            match outcome? {
                Outcome::Done { sigma2, x, psi } => {
                    acc.accumulate(&x, &psi)?;
                    samples.push(SampleSigma {
                        index: index as u64,
                        sigma2,
                    });
                }
                Outcome::Premature { steps } => {
                    premature.push(index as u64);
                    shortest = shortest.min(steps);
                }
            }
        }
        if premature.len() as f64 > MAX_BREAKDOWN_FRACTION * config.samples as f64 {
            return Err(Error::PrematureBreakdown {
                ensemble: ensemble.to_string(),
                failed: premature.len(),
                total: config.samples,
                shortest,
                needed: window.end,
            });
        }
        let matrices = acc.finalize()?;
        let sigma2: Vec<f64> = samples.iter().map(|s| s.sigma2).collect();
        let mut fits = Vec::new();
        let mut fit_errors = Vec::new();
        for model in [
            FitModel::Normal,
            FitModel::NormalHistogram,
            FitModel::ScaledChiSquare,
        ] {
            match fit_report(&sigma2, model, config.bins, config.alpha) {
                Ok(r) => fits.push(r),
                Err(e) => fit_errors.push(format!("{model}: {e}")),
            }
        }
        ensembles.push(EnsembleRecord {
            ensemble,
            samples,
            premature,
            matrices,
            fits,
            fit_errors,
        });
    }

    let manifest = Manifest {
        config: config.clone(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        conventions: conventions(),
        spectrum: SpectrumInfo::of(spectrum, spectrum_key),
        ensembles: ensembles
            .iter()
            .map(|e| ManifestEntry {
                ensemble: e.ensemble,
                retained: e.samples.len(),
                premature: e.premature.clone(),
                excluded_psi: e.matrices.excluded_psi,
                summary: e.summary(),
                fit_errors: e.fit_errors.clone(),
            })
            .collect(),
    };
    Ok(RunRecord {
        manifest,
        ensembles,
    })
}

fn dump_coefficients(config: &RunConfig, spectrum: &Spectrum) -> Result<()> {
    let dir = config.output.join("coefficients");
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    let cfg = config.lanczos();
    for &ensemble in &config.ensembles {
        for index in 0..config.samples as u64 {
            let seed = SeedSpec::new(ensemble.derive_seed(config.master_seed), index);
            let run = lanczos(
                spectrum,
                &sample_initial(ensemble, config.n_max, seed)?,
                &cfg,
            )?;
            write_coefficients(&run.b, &dir.join(format!("{ensemble}-{index}.txt")))?;
        }
    }
    Ok(())
}

pub fn sigma2_path(dir: &Path, ensemble: EnsembleKind) -> PathBuf {
    dir.join(format!("sigma2-{ensemble}.csv"))
}

pub fn xx_path(dir: &Path, ensemble: EnsembleKind) -> PathBuf {
    dir.join(format!("xx-{ensemble}.csv"))
}

pub fn logpsi_path(dir: &Path, ensemble: EnsembleKind) -> PathBuf {
    dir.join(format!("logpsi-{ensemble}.csv"))
}

pub fn fits_path(dir: &Path, ensemble: EnsembleKind) -> PathBuf {
    dir.join(format!("fits-{ensemble}.json"))
}

pub fn format_sigma2_csv(samples: &[SampleSigma]) -> String {
    let mut out = String::from("sample_index,sigma2\n");
    for s in samples {
        out.push_str(&format!("{},{:?}\n", s.index, s.sigma2));
    }
    out
}

pub fn read_sigma2_csv(path: &Path) -> Result<Vec<SampleSigma>> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let malformed = |reason: String| Error::Malformed {
        path: path.to_path_buf(),
        reason,
    };
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("sample_index,sigma2") {
        return Err(malformed("expected header `sample_index,sigma2`".into()));
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let (idx, val) = line
                .split_once(',')
                .ok_or_else(|| malformed(format!("row {}: missing comma", i + 1)))?;
            Ok(SampleSigma {
                index: idx
                    .trim()
                    .parse()
                    .map_err(|e| malformed(format!("row {}: {e}", i + 1)))?,
                sigma2: val
                    .trim()
                    .parse()
                    .map_err(|e| malformed(format!("row {}: {e}", i + 1)))?,
            })
        })
        .collect()
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = fs::File::create(path).map_err(io_err(path))?;
    f.write_all(text.as_bytes()).map_err(io_err(path))
}

fn matrix_header(config: &RunConfig, ensemble: EnsembleKind, n_samples: usize) -> MatrixHeader {
    MatrixHeader {
        n_samples,
        window: config.window(),
        ensemble: ensemble.to_string(),
        a: config.a,
        n_max: config.n_max,
    }
}

pub fn write_record(record: &RunRecord, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let config = &record.manifest.config;
    for e in &record.ensembles {
        write_text(
            &sigma2_path(dir, e.ensemble),
            &format_sigma2_csv(&e.samples),
        )?;
        write_matrix_csv(
            &xx_path(dir, e.ensemble),
            &matrix_header(config, e.ensemble, e.matrices.n_samples),
            &e.matrices.xx,
        )?;
        write_matrix_csv(
            &logpsi_path(dir, e.ensemble),
            &matrix_header(config, e.ensemble, e.matrices.n_psi),
            &e.matrices.logpsi,
        )?;
        write_text(
            &fits_path(dir, e.ensemble),
            &(serde_json::to_string_pretty(&e.fits)? + "\n"),
        )?;
    }
    let manifest_path = dir.join(MANIFEST_FILE);
    write_text(
        &manifest_path,
        &(serde_json::to_string_pretty(&record.manifest)? + "\n"),
    )
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    Ok(serde_json::from_str(&text)?)
}

/// Reads a run directory written by [`write_record`].
pub fn load_record(dir: &Path) -> Result<RunRecord> {
    let manifest = read_manifest(dir)?;
    let mut ensembles = Vec::new();
    for entry in &manifest.ensembles {
        let e = entry.ensemble;
        let samples = read_sigma2_csv(&sigma2_path(dir, e))?;
        let (xx_header, xx) = read_matrix_csv(&xx_path(dir, e))?;
        let (psi_header, logpsi) = read_matrix_csv(&logpsi_path(dir, e))?;
        let fits_file = fits_path(dir, e);
        let fits: Vec<FitReport> =
            serde_json::from_str(&fs::read_to_string(&fits_file).map_err(io_err(&fits_file))?)?;
        ensembles.push(EnsembleRecord {
            ensemble: e,
            samples,
            premature: entry.premature.clone(),
            matrices: CorrelationMatrices {
                n_samples: xx_header.n_samples,
                n_psi: psi_header.n_samples,
                excluded_psi: entry.excluded_psi,
                xx,
                logpsi,
            },
            fits,
            fit_errors: entry.fit_errors.clone(),
        });
    }
    Ok(RunRecord {
        manifest,
        ensembles,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExportFormat {
    Csv,
    Json,
}

impl FromStr for ExportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "csv" => Ok(Self::Csv),
            "json" => Ok(Self::Json),
            _ => Err(Error::InvalidParameter(format!(
                "unknown export format {s:?}"
            ))),
        }
    }
}

#[derive(Serialize)]
struct JsonExport<'a> {
    manifest: &'a Manifest,
    ensembles: &'a [EnsembleRecord],
}

/// Writes a record to `dest`. CSV writes the run layout plus `summary.csv`
/// (`ensemble,n,mean_sigma2,std_sigma2,sem_sigma2,premature,excluded_psi`);
/// JSON writes everything into `record.json`. Returns the files written.
pub fn export(record: &RunRecord, format: ExportFormat, dest: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dest).map_err(io_err(dest))?;
    match format {
        ExportFormat::Json => {
            let path = dest.join("record.json");
            let payload = JsonExport {
                manifest: &record.manifest,
                ensembles: &record.ensembles,
            };
            write_text(&path, &(serde_json::to_string_pretty(&payload)? + "\n"))?;
            Ok(vec![path])
        }
        ExportFormat::Csv => {
            write_record(record, dest)?;
            let mut summary = String::from(
                "ensemble,n,mean_sigma2,std_sigma2,sem_sigma2,premature,excluded_psi\n",
            );
            let mut files = vec![dest.join(MANIFEST_FILE)];
            for e in &record.ensembles {
                let s = e.summary();
                summary.push_str(&format!(
                    "{},{},{:?},{:?},{:?},{},{}\n",
                    e.ensemble,
                    s.n,
                    s.mean,
                    s.std,
                    s.sem,
                    e.premature.len(),
                    e.matrices.excluded_psi
                ));
                files.extend([
                    sigma2_path(dest, e.ensemble),
                    xx_path(dest, e.ensemble),
                    logpsi_path(dest, e.ensemble),
                ]);
            }
            let path = dest.join("summary.csv");
            write_text(&path, &summary)?;
            files.push(path);
            Ok(files)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub a: f64,
    pub ensemble: EnsembleKind,
    pub summary: Summary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutcome {
    pub rows: Vec<SweepRow>,
    /// `(a, ensemble, message)` for members that failed.
    pub failures: Vec<(f64, EnsembleKind, String)>,
    pub cache_hits: usize,
    pub cache_solves: usize,
}

impl SweepOutcome {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("a,ensemble,n,mean_sigma2,std_sigma2,sem_sigma2\n");
        for r in &self.rows {
            let s = r.summary;
            out.push_str(&format!(
                "{:?},{},{},{:?},{:?},{:?}\n",
                r.a, r.ensemble, s.n, s.mean, s.std, s.sem
            ));
        }
        out
    }
}

impl fmt::Display for SweepOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:>8} {:>8} {:>6} {:>14} {:>14}",
            "a", "ensemble", "n", "mean sigma2", "sem"
        )?;
        for r in &self.rows {
            writeln!(
                f,
                "{:>8.4} {:>8} {:>6} {:>14.6e} {:>14.3e}",
                r.a, r.ensemble, r.summary.n, r.summary.mean, r.summary.sem
            )?;
        }
        for (a, e, msg) in &self.failures {
            writeln!(f, "FAILED a={a} {e}: {msg}")?;
        }
        Ok(())
    }
}

/// One member run per `(a, ensemble)`, each written to
/// `base.output/a-<a>-<ensemble>`. Failures are recorded and the sweep goes on.
pub fn sweep(base: &RunConfig, a_values: &[f64], cache: &SpectrumCache) -> Result<SweepOutcome> {
    if a_values.is_empty() {
        return Err(Error::InvalidParameter("empty a-grid".into()));
    }
    let members: Vec<RunConfig> = a_values
        .iter()
        .flat_map(|&a| {
            base.ensembles.iter().map(move |&e| RunConfig {
                a,
                ensembles: vec![e],
                output: base.output.join(format!("a-{a:?}-{e}")),
                ..base.clone()
            })
        })
        .collect();
    for m in &members {
        m.validate()?;
    }
    let (hits0, solves0) = (cache.hits(), cache.solves());
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for m in &members {
        let ensemble = m.ensembles[0];
        match run_experiment(m, cache) {
            Ok(record) => rows.push(SweepRow {
                a: m.a,
                ensemble,
                summary: record.ensembles[0].summary(),
            }),
            Err(e) => failures.push((m.a, ensemble, e.to_string())),
        }
    }
    let outcome = SweepOutcome {
        rows,
        failures,
        cache_hits: cache.hits() - hits0,
        cache_solves: cache.solves() - solves0,
    };
    fs::create_dir_all(&base.output).map_err(io_err(&base.output))?;
    write_text(&base.output.join("sweep.csv"), &outcome.to_csv())?;
    Ok(outcome)
}
