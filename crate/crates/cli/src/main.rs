use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use krylov_core::billiard::{load_spectrum, save_spectrum, CACHE_DIR_ENV};
use krylov_core::fitting::{fit_report, DEFAULT_ALPHA};
use krylov_core::harness::{self, read_sigma2_csv};
use krylov_core::{
    BinRule, DiskPlacement, ExportFormat, FitModel, GridSpec, RunConfig, SpectrumCache,
    SpectrumRequest,
};

#[derive(Parser)]
#[command(
    name = "krylov",
    version,
    about = "Lanczos-coefficient statistics on billiard spectra"
)]
struct Cli {
    /// Spectrum cache directory (default: $KRYLOV_CACHE_DIR or .krylov-cache)
    #[arg(long, global = true)]
    cache_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve, cache or inspect a billiard spectrum
    Spectrum(SpectrumArgs),
    /// Run one experiment configuration
    Run(RunArgs),
    /// Run over a grid of `a` values, one member per (a, ensemble)
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated values of a
        #[arg(long, value_delimiter = ',', required = true)]
        a_grid: Vec<f64>,
    },
    /// Fit stored sigma2 samples
    Fit(FitArgs),
    /// Re-export a run directory as CSV or JSON
    Export {
        /// Run directory containing manifest.json
        #[arg(long)]
        run: PathBuf,
        #[arg(long, default_value = "csv")]
        format: String,
        #[arg(long)]
        dest: PathBuf,
    },
}

#[derive(Args)]
struct SpectrumArgs {
    /// Print the header and levels of an existing spectrum file
    #[arg(long, conflicts_with_all = ["kind", "a"])]
    inspect: Option<PathBuf>,
    #[arg(long, required_unless_present = "inspect")]
    kind: Option<String>,
    #[arg(long, required_unless_present = "inspect")]
    a: Option<f64>,
    #[arg(long, default_value = "vertex")]
    placement: String,
    #[arg(long, default_value_t = 50)]
    n_max: usize,
    /// Grid spacing or `auto`
    #[arg(long, default_value = "auto")]
    grid: String,
    /// Also write the spectrum to this file
    #[arg(long)]
    out: Option<PathBuf>,
    /// Solve without reading or writing the cache
    #[arg(long)]
    no_cache: bool,
}

/// Every flag maps onto the config-file key of the same name.
#[derive(Args, Default)]
struct RunArgs {
    /// Key-value config file; flags override its entries
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    kind: Option<String>,
    #[arg(long)]
    a: Option<String>,
    #[arg(long)]
    placement: Option<String>,
    #[arg(long)]
    n_max: Option<String>,
    /// Grid spacing or `auto`
    #[arg(long)]
    grid: Option<String>,
    #[arg(long)]
    spectrum_file: Option<String>,
    /// Comma-separated, or `all`
    #[arg(long)]
    ensembles: Option<String>,
    #[arg(long)]
    samples: Option<String>,
    /// START:END or `auto`
    #[arg(long)]
    window: Option<String>,
    #[arg(long)]
    max_steps: Option<String>,
    /// none, full, partial or partial:THRESHOLD
    #[arg(long)]
    reorth: Option<String>,
    #[arg(long)]
    breakdown_tol: Option<String>,
    /// measure or operator
    #[arg(long)]
    engine: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    output: Option<String>,
    #[arg(long)]
    workers: Option<String>,
    #[arg(long)]
    unit_norm_psi: Option<String>,
    /// fd, sqrt or a bin count
    #[arg(long)]
    bins: Option<String>,
    #[arg(long)]
    alpha: Option<String>,
    #[arg(long)]
    dump_coefficients: Option<String>,
    /// Write the resolved configuration to this file and exit
    #[arg(long)]
    write_config: Option<PathBuf>,
}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut config = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path)
                    .with_context(|| format!("reading {}", path.display()))?;
                RunConfig::from_kv(&text).with_context(|| format!("parsing {}", path.display()))?
            }
            None => RunConfig::from_kv("")?,
        };
        let flags = [
            ("kind", &self.kind),
            ("a", &self.a),
            ("placement", &self.placement),
            ("n_max", &self.n_max),
            ("grid", &self.grid),
            ("spectrum_file", &self.spectrum_file),
            ("ensembles", &self.ensembles),
            ("samples", &self.samples),
            ("window", &self.window),
            ("max_steps", &self.max_steps),
            ("reorth", &self.reorth),
            ("breakdown_tol", &self.breakdown_tol),
            ("engine", &self.engine),
            ("seed", &self.seed),
            ("output", &self.output),
            ("workers", &self.workers),
            ("unit_norm_psi", &self.unit_norm_psi),
            ("bins", &self.bins),
            ("alpha", &self.alpha),
            ("dump_coefficients", &self.dump_coefficients),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                config
                    .set(key, v)
                    .with_context(|| format!("--{}", key.replace('_', "-")))?;
            }
        }
        config.validate()?;
        Ok(config)
    }
}

#[derive(Args)]
struct FitArgs {
    /// sigma2 CSV from a run, or one value per line
    #[arg(long)]
    input: PathBuf,
    /// normal, normal_histogram, scaled_chi_square or scaled_chi_square_mle
    #[arg(long, default_value = "normal")]
    model: String,
    #[arg(long, default_value = "fd")]
    bins: String,
    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    alpha: f64,
    /// Write the JSON report here instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
}

fn cache(cli_dir: &Option<PathBuf>) -> SpectrumCache {
    match cli_dir {
        Some(dir) => SpectrumCache::new(dir),
        None => SpectrumCache::from_env(),
    }
}

fn spectrum_cmd(args: &SpectrumArgs, cache: &SpectrumCache) -> Result<()> {
    if let Some(path) = &args.inspect {
        let s = load_spectrum(path, None)?;
        println!("file {}", path.display());
        match s.provenance().origin() {
            Some(o) => println!(
                "kind {} a {} placement {} h {}",
                o.kind, o.a, o.placement, o.h
            ),
            None => println!("origin unknown"),
        }
        println!("levels {}", s.n_max());
        for (i, e) in s.energies().iter().enumerate() {
            println!("{} {:?}", i + 1, e);
        }
        return Ok(());
    }
    let req = SpectrumRequest {
        kind: args.kind.as_deref().unwrap_or_default().parse()?,
        a: args.a.unwrap_or_default(),
        placement: args.placement.parse::<DiskPlacement>()?,
        grid: args.grid.parse::<GridSpec>()?,
        n_max: args.n_max,
    };
    let spectrum = if args.no_cache {
        req.solve()?
    } else {
        let s = cache.get_or_solve(&req)?;
        eprintln!(
            "cache {} ({})",
            cache.path_for(&req).display(),
            if cache.hits() > 0 { "hit" } else { "solved" }
        );
        s
    };
    if let Some(out) = &args.out {
        save_spectrum(&spectrum, out)?;
    }
    if let Some(o) = spectrum.provenance().origin() {
        println!("h {:?}", o.h);
    }
    for (i, e) in spectrum.energies().iter().enumerate() {
        println!("{} {:?}", i + 1, e);
    }
    Ok(())
}

fn write_config(config: &RunConfig, path: &Path) -> Result<()> {
    fs::write(path, config.to_kv()).with_context(|| format!("writing {}", path.display()))
}

fn run_cmd(args: &RunArgs, cache: &SpectrumCache) -> Result<()> {
    let config = args.resolve()?;
    if let Some(path) = &args.write_config {
        return write_config(&config, path);
    }
    let record = harness::run_experiment(&config, cache)?;
    println!(
        "{:>8} {:>6} {:>10} {:>14} {:>14}",
        "ensemble", "n", "premature", "mean sigma2", "sem"
    );
    for e in &record.ensembles {
        let s = e.summary();
        println!(
            "{:>8} {:>6} {:>10} {:>14.6e} {:>14.3e}",
            e.ensemble,
            s.n,
            e.premature.len(),
            s.mean,
            s.sem
        );
    }
    println!("wrote {}", config.output.display());
    Ok(())
}

fn sweep_cmd(args: &RunArgs, a_grid: &[f64], cache: &SpectrumCache) -> Result<bool> {
    let base = args.resolve()?;
    if let Some(path) = &args.write_config {
        write_config(&base, path)?;
        return Ok(true);
    }
    let outcome = harness::sweep(&base, a_grid, cache)?;
    print!("{outcome}");
    println!(
        "cache hits {} solves {}",
        outcome.cache_hits, outcome.cache_solves
    );
    Ok(outcome.failures.is_empty())
}

fn read_samples(path: &Path) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    if text.starts_with("sample_index,sigma2") {
        return Ok(read_sigma2_csv(path)?
            .into_iter()
            .map(|s| s.sigma2)
            .collect());
    }
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| {
            l.parse::<f64>()
                .with_context(|| format!("bad sample {l:?}"))
        })
        .collect()
}

fn fit_cmd(args: &FitArgs) -> Result<()> {
    let samples = read_samples(&args.input)?;
    let model: FitModel = args.model.parse()?;
    let bins: BinRule = args.bins.parse()?;
    let report = fit_report(&samples, model, bins, args.alpha)?;
    let json = serde_json::to_string_pretty(&report)? + "\n";
    match &args.out {
        Some(path) => {
            fs::write(path, json).with_context(|| format!("writing {}", path.display()))?
        }
        None => print!("{json}"),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cache = cache(&cli.cache_dir);
    let result = match &cli.command {
        Command::Spectrum(args) => spectrum_cmd(args, &cache).map(|_| true),
        Command::Run(args) => run_cmd(args, &cache).map(|_| true),
        Command::Sweep { run, a_grid } => sweep_cmd(run, a_grid, &cache),
        Command::Fit(args) => fit_cmd(args).map(|_| true),
        Command::Export { run, format, dest } => (|| -> Result<bool> {
            let format: ExportFormat = format.parse()?;
            let record = harness::load_record(run)?;
            for path in harness::export(&record, format, dest)? {
                println!("{}", path.display());
            }
            Ok(true)
        })(),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("some sweep members failed");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            if std::env::var_os(CACHE_DIR_ENV).is_none()
                && matches!(cli.command, Command::Spectrum(_))
            {
                eprintln!("hint: set {CACHE_DIR_ENV} to choose the cache directory");
            }
            ExitCode::FAILURE
        }
    }
}
