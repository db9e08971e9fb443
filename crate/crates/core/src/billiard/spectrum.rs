//! Truncated billiard spectra: solving, grid convergence, persistence and caching.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::billiard::eigen::smallest_eigenvalues;
use crate::billiard::geometry::{BilliardGeometry, BilliardKind, DiskPlacement};
use crate::billiard::grid::{discretize, GridDiscretization};
use crate::error::{io_err, Error, Result};

const FORMAT_TAG: &str = "krylov-spectrum";
const FORMAT_VERSION: u32 = 1;

/// Environment variable naming the spectrum cache directory.
pub const CACHE_DIR_ENV: &str = "KRYLOV_CACHE_DIR";

/// Geometry and grid a spectrum was computed on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectrumOrigin {
    pub kind: BilliardKind,
    pub a: f64,
    pub placement: DiskPlacement,
    pub h: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Provenance {
    Solved(SpectrumOrigin),
    File {
        path: PathBuf,
        origin: Option<SpectrumOrigin>,
    },
    /// Supplied directly by the caller.
    Given,
}

impl Provenance {
    pub fn origin(&self) -> Option<SpectrumOrigin> {
        match self {
            Provenance::Solved(o) => Some(*o),
            Provenance::File { origin, .. } => *origin,
            Provenance::Given => None,
        }
    }
}

/// Ascending, nonnegative energy levels `E_1..E_{N_max}` of `H = -Δ`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    energies: Vec<f64>,
    provenance: Provenance,
}

impl Spectrum {
    pub fn new(energies: Vec<f64>, provenance: Provenance) -> Result<Self> {
        if energies.is_empty() {
            return Err(Error::InvalidParameter("spectrum has no levels".into()));
        }
        if let Some(bad) = energies.iter().find(|e| !(e.is_finite() && **e >= 0.0)) {
            return Err(Error::InvalidParameter(format!(
                "energy {bad} is negative or not finite"
            )));
        }
        if energies.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::InvalidParameter(
                "energies are not sorted ascending".into(),
            ));
        }
        Ok(Self {
            energies,
            provenance,
        })
    }

    /// Spectrum supplied directly, e.g. a synthetic level set.
    pub fn from_energies(energies: Vec<f64>) -> Result<Self> {
        Self::new(energies, Provenance::Given)
    }

    pub fn energies(&self) -> &[f64] {
        &self.energies
    }

    pub fn n_max(&self) -> usize {
        self.energies.len()
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    /// `E_m - E_n`.
    #[inline]
    pub fn gap(&self, m: usize, n: usize) -> f64 {
        self.energies[m] - self.energies[n]
    }

    /// Every level multiplied by `c > 0`.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        if !(c.is_finite() && c > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "scale factor must be positive, got {c}"
            )));
        }
        Self::new(
            self.energies.iter().map(|e| e * c).collect(),
            self.provenance.clone(),
        )
    }
}

/// Spectrum on one grid plus its comparison against the grid at half the spacing.
#[derive(Debug, Clone)]
pub struct SpectrumSolution {
    pub spectrum: Spectrum,
    /// Levels on the `h/2` grid.
    pub refined: Vec<f64>,
    /// `|E(h) - E(h/2)| / E(h/2)` per level.
    pub discrepancy: Vec<f64>,
}

impl SpectrumSolution {
    pub fn max_discrepancy(&self) -> f64 {
        self.discrepancy.iter().copied().fold(0.0, f64::max)
    }

    /// Discrepancy of the highest retained level.
    pub fn top_discrepancy(&self) -> f64 {
        *self.discrepancy.last().unwrap_or(&0.0)
    }
}

/// Lowest `n_levels` eigenvalues on a single grid.
pub fn solve_levels(disc: &GridDiscretization, n_levels: usize) -> Result<Spectrum> {
    let required = n_levels.saturating_mul(5);
    if n_levels == 0 || disc.len() < required {
        return Err(Error::TooCoarse {
            points: disc.len(),
            required: required.max(1),
        });
    }
    let energies = smallest_eigenvalues(disc.laplacian(), n_levels)?;
    let g = disc.geometry();
    let origin = SpectrumOrigin {
        kind: g.kind(),
        a: g.a(),
        placement: g.placement(),
        h: disc.h(),
    };
    Spectrum::new(energies, Provenance::Solved(origin))
}

/// Lowest `n_levels` eigenvalues on `disc`, checked against the grid at `h/2`.
pub fn solve_spectrum(disc: &GridDiscretization, n_levels: usize) -> Result<SpectrumSolution> {
    let coarse = solve_levels(disc, n_levels)?;
    let fine_disc = discretize(disc.geometry(), 0.5 * disc.h())?;
    let fine = solve_levels(&fine_disc, n_levels)?;
    Ok(compare(coarse, fine.energies))
}

fn compare(spectrum: Spectrum, refined: Vec<f64>) -> SpectrumSolution {
    let discrepancy = spectrum
        .energies()
        .iter()
        .zip(&refined)
        .map(|(c, f)| (c - f).abs() / f)
        .collect();
    SpectrumSolution {
        spectrum,
        refined,
        discrepancy,
    }
}

/// Grid refinement rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum GridSpec {
    /// Halve from `diag / 128` until the top level moves by less than 1% between `h` and `h/2`.
    Auto,
    Fixed(f64),
}

impl fmt::Display for GridSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GridSpec::Auto => f.write_str("auto"),
            GridSpec::Fixed(h) => write!(f, "{h}"),
        }
    }
}

impl FromStr for GridSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("auto") {
            return Ok(GridSpec::Auto);
        }
        let h: f64 = s
            .parse()
            .map_err(|_| Error::InvalidParameter(format!("bad grid spacing `{s}`")))?;
        if !(h.is_finite() && h > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "grid spacing must be positive, got {h}"
            )));
        }
        Ok(GridSpec::Fixed(h))
    }
}

pub const CONVERGENCE_TARGET: f64 = 0.01;
const MAX_REFINEMENTS: usize = 5;

/// Spectrum on the coarsest grid whose top level changes by less than 1% at half the spacing.
pub fn converged_spectrum(geom: &BilliardGeometry, n_levels: usize) -> Result<SpectrumSolution> {
    let mut h = geom.bounding_box().diagonal() / 128.0;
    let mut coarse = match solve_levels(&discretize(geom, h)?, n_levels) {
        Ok(s) => s,
        Err(Error::TooCoarse { .. }) => {
            h *= 0.5;
            solve_levels(&discretize(geom, h)?, n_levels)?
        }
        Err(e) => return Err(e),
    };
    let mut last = None;
    for _ in 0..MAX_REFINEMENTS {
        let fine = solve_levels(&discretize(geom, 0.5 * h)?, n_levels)?;
        let sol = compare(coarse, fine.energies.clone());
        if sol.top_discrepancy() < CONVERGENCE_TARGET {
            return Ok(sol);
        }
        last = Some(sol.top_discrepancy());
        coarse = fine;
        h *= 0.5;
    }
    Err(Error::NoConvergence {
        iterations: MAX_REFINEMENTS,
        residual: last.unwrap_or(f64::NAN),
    })
}

/// Writes the plain-text spectrum format.
pub fn save_spectrum(spectrum: &Spectrum, path: &Path) -> Result<()> {
    let mut out = String::new();
    out.push_str(&format!("{FORMAT_TAG} {FORMAT_VERSION}\n"));
    out.push_str(&header_text(spectrum.provenance.origin(), spectrum.n_max()));
    for e in &spectrum.energies {
        out.push_str(&format!("{e:?}\n"));
    }
    fs::write(path, out).map_err(io_err(path))
}

fn header_text(origin: Option<SpectrumOrigin>, n_max: usize) -> String {
    match origin {
        Some(o) => format!(
            "kind {}\na {:?}\nplacement {}\nh {:?}\nn_max {n_max}\n",
            o.kind, o.a, o.placement, o.h
        ),
        None => format!("kind -\na -\nplacement -\nh -\nn_max {n_max}\n"),
    }
}

/// Reads a spectrum file. With `expected_levels`, the stored count must match.
pub fn load_spectrum(path: &Path, expected_levels: Option<usize>) -> Result<Spectrum> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let malformed = |reason: String| Error::Malformed {
        path: path.to_path_buf(),
        reason,
    };
    let mut lines = text.lines();

    let tag = lines.next().ok_or_else(|| malformed("empty file".into()))?;
    let mut parts = tag.split_whitespace();
    if parts.next() != Some(FORMAT_TAG) {
        return Err(malformed(format!("missing `{FORMAT_TAG}` header")));
    }
    match parts.next().and_then(|v| v.parse::<u32>().ok()) {
        Some(FORMAT_VERSION) => {}
        Some(v) => return Err(malformed(format!("unsupported format version {v}"))),
        None => return Err(malformed("missing format version".into())),
    }

    let mut field = |name: &str| -> Result<String> {
        let line = lines
            .next()
            .ok_or_else(|| malformed(format!("missing `{name}` line")))?;
        match line.split_once(' ') {
            Some((key, value)) if key == name => Ok(value.trim().to_string()),
            _ => Err(malformed(format!("expected `{name}` line, found `{line}`"))),
        }
    };
    let kind = field("kind")?;
    let a = field("a")?;
    let placement = field("placement")?;
    let h = field("h")?;
    let n_max: usize = field("n_max")?
        .parse()
        .map_err(|_| malformed("bad n_max".into()))?;

    let origin = if kind == "-" {
        None
    } else {
        let num = |s: &str, what: &str| {
            s.parse::<f64>()
                .map_err(|_| malformed(format!("bad {what} `{s}`")))
        };
        Some(SpectrumOrigin {
            kind: kind.parse().map_err(|e: Error| malformed(e.to_string()))?,
            a: num(&a, "a")?,
            placement: placement
                .parse()
                .map_err(|e: Error| malformed(e.to_string()))?,
            h: num(&h, "h")?,
        })
    };

    let energies = lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.trim()
                .parse::<f64>()
                .map_err(|_| malformed(format!("bad energy `{l}`")))
        })
        .collect::<Result<Vec<_>>>()?;
    if energies.len() != n_max {
        return Err(malformed(format!(
            "header declares {n_max} levels, file holds {}",
            energies.len()
        )));
    }
    if let Some(expected) = expected_levels {
        if expected != n_max {
            return Err(Error::LevelCountMismatch {
                expected,
                found: n_max,
            });
        }
    }
    Spectrum::new(
        energies,
        Provenance::File {
            path: path.to_path_buf(),
            origin,
        },
    )
    .map_err(|e| malformed(e.to_string()))
}

/// Everything that determines a solved spectrum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectrumRequest {
    pub kind: BilliardKind,
    pub a: f64,
    pub placement: DiskPlacement,
    pub grid: GridSpec,
    pub n_max: usize,
}

impl SpectrumRequest {
    /// Cache key: SHA-256 over the header fields, truncated to 16 hex digits.
    pub fn key(&self) -> String {
        let text = format!(
            "kind {}\na {:?}\nplacement {}\nh {}\nn_max {}\n",
            self.kind, self.a, self.placement, self.grid, self.n_max
        );
        let digest = Sha256::digest(text.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn solve(&self) -> Result<Spectrum> {
        let geom = BilliardGeometry::new(self.kind, self.a, self.placement)?;
        match self.grid {
            GridSpec::Auto => Ok(converged_spectrum(&geom, self.n_max)?.spectrum),
            GridSpec::Fixed(h) => solve_levels(&discretize(&geom, h)?, self.n_max),
        }
    }
}

/// On-disk spectrum cache. Readers never see partial files: writers hold a
/// per-file lock and publish by atomic rename.
#[derive(Debug)]
pub struct SpectrumCache {
    dir: PathBuf,
    hits: AtomicUsize,
    solves: AtomicUsize,
}

impl SpectrumCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self {
            dir: dir.into(),
            hits: AtomicUsize::new(0),
            solves: AtomicUsize::new(0),
        }
    }

    /// Directory from `KRYLOV_CACHE_DIR`, else `.krylov-cache`.
    pub fn from_env() -> Self {
        Self::new(
            std::env::var_os(CACHE_DIR_ENV)
                .map_or_else(|| PathBuf::from(".krylov-cache"), PathBuf::from),
        )
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::Relaxed)
    }

    pub fn solves(&self) -> usize {
        self.solves.load(Ordering::Relaxed)
    }

    pub fn path_for(&self, req: &SpectrumRequest) -> PathBuf {
        self.dir.join(format!("spectrum-{}.txt", req.key()))
    }

    pub fn get_or_solve(&self, req: &SpectrumRequest) -> Result<Spectrum> {
        let path = self.path_for(req);
        if path.exists() {
            let spectrum = load_spectrum(&path, Some(req.n_max))?;
            self.hits.fetch_add(1, Ordering::Relaxed);
            return Ok(spectrum);
        }
        let spectrum = req.solve()?;
        self.solves.fetch_add(1, Ordering::Relaxed);
        fs::create_dir_all(&self.dir).map_err(io_err(&self.dir))?;
        self.publish(&spectrum, &path)?;
        Ok(spectrum)
    }

    fn publish(&self, spectrum: &Spectrum, path: &Path) -> Result<()> {
        let lock_path = path.with_extension("lock");
        let _lock = FileLock::acquire(&lock_path)?;
        if path.exists() {
            return Ok(());
        }
        let tmp = path.with_extension(format!("tmp{}", std::process::id()));
        save_spectrum(spectrum, &tmp)?;
        fs::rename(&tmp, path).map_err(io_err(path))
    }
}

struct FileLock {
    path: PathBuf,
}

impl FileLock {
    fn acquire(path: &Path) -> Result<Self> {
        let deadline = Instant::now() + Duration::from_secs(600);
        loop {
            match fs::OpenOptions::new()
                .write(true)
                .create_new(true)
                .open(path)
            {
                Ok(mut f) => {
                    let _ = writeln!(f, "{}", std::process::id());
                    return Ok(Self {
                        path: path.to_path_buf(),
                    });
                }
                Err(e)
                    if e.kind() == std::io::ErrorKind::AlreadyExists
                        && Instant::now() < deadline =>
                {
                    std::thread::sleep(Duration::from_millis(50));
                }
                Err(e) => {
                    return Err(Error::Io {
                        path: path.to_path_buf(),
                        source: e,
                    })
                }
            }
        }
    }
}

impl Drop for FileLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use super::*;
    use crate::billiard::geometry::make_geometry;

    #[test]
    fn unit_square_lowest_levels() {
        let g = make_geometry(BilliardKind::Stadium, 0.0).unwrap();
        let d = discretize(&g, 1.0 / 64.0).unwrap();
        let s = solve_levels(&d, 3).unwrap();
        let e = s.energies();
        assert!((e[0] / (2.0 * PI * PI) - 1.0).abs() < 0.005);
        assert!((e[1] / (5.0 * PI * PI) - 1.0).abs() < 0.005);
        assert!((e[1] - e[2]).abs() <= 1e-8 * e[1]);
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.txt");
        let origin = SpectrumOrigin {
            kind: BilliardKind::Sinai,
            a: 0.3,
            placement: DiskPlacement::Vertex,
            h: 0.01,
        };
        let s = Spectrum::new(
            vec![0.1, 1.0 / 3.0, std::f64::consts::E, 1e10 / 7.0],
            Provenance::Solved(origin),
        )
        .unwrap();
        save_spectrum(&s, &path).unwrap();
        let back = load_spectrum(&path, Some(4)).unwrap();
        assert_eq!(back.energies(), s.energies());
        assert_eq!(back.provenance().origin(), Some(origin));
    }

    #[test]
    fn truncated_and_mismatched_files_fail() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.txt");
        let s = Spectrum::from_energies(vec![1.0, 2.0, 3.0]).unwrap();
        save_spectrum(&s, &path).unwrap();

        match load_spectrum(&path, Some(5)) {
            Err(Error::LevelCountMismatch {
                expected: 5,
                found: 3,
            }) => {}
            other => panic!("unexpected {other:?}"),
        }
        let msg = load_spectrum(&path, Some(5)).unwrap_err().to_string();
        assert!(msg.contains('5') && msg.contains('3'));

        let text = fs::read_to_string(&path).unwrap();
        let truncated: String = text.lines().take(7).map(|l| format!("{l}\n")).collect();
        fs::write(&path, truncated).unwrap();
        assert!(matches!(
            load_spectrum(&path, None),
            Err(Error::Malformed { .. })
        ));

        fs::write(&path, "krylov-spectrum 2\n").unwrap();
        assert!(matches!(
            load_spectrum(&path, None),
            Err(Error::Malformed { .. })
        ));
    }

    #[test]
    fn rejects_unsorted_or_negative() {
        assert!(Spectrum::from_energies(vec![2.0, 1.0]).is_err());
        assert!(Spectrum::from_energies(vec![-1.0, 1.0]).is_err());
        assert!(Spectrum::from_energies(vec![]).is_err());
    }

    #[test]
    fn too_many_levels_for_grid() {
        let g = make_geometry(BilliardKind::Stadium, 0.0).unwrap();
        let d = discretize(&g, 0.25).unwrap();
        assert!(matches!(solve_levels(&d, 3), Err(Error::TooCoarse { .. })));
    }

    #[test]
    fn cache_counts_hits() {
        let dir = tempfile::tempdir().unwrap();
        let cache = SpectrumCache::new(dir.path());
        let req = SpectrumRequest {
            kind: BilliardKind::Sinai,
            a: 0.5,
            placement: DiskPlacement::Vertex,
            grid: GridSpec::Fixed(0.05),
            n_max: 5,
        };
        let first = cache.get_or_solve(&req).unwrap();
        let second = cache.get_or_solve(&req).unwrap();
        assert_eq!(first.energies(), second.energies());
        assert_eq!((cache.solves(), cache.hits()), (1, 1));
    }
}
