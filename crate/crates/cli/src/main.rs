//! `gpnn`: sweeps, bound queries, validation and dataset benchmarks.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use gpnn_core::harness::bench::run_benchmark;
use gpnn_core::harness::ingest::{ingest_csv, TargetColumn};
use gpnn_core::harness::output::{
    emit_outputs, export_dataset, read_records, write_csv, write_records_to, FIT_COLUMNS,
};
use gpnn_core::harness::queries::{
    evaluate_bounds, evaluate_sample_size, BoundsRequest, SampleSizeRequest,
};
use gpnn_core::harness::sweep::{data_seed, refit};
use gpnn_core::harness::{run_sweep, run_validation_suite, Estimator, ExperimentConfig, MSpec};
use gpnn_core::metrics::Averaging;
use gpnn_core::simulate::{self, FieldSampleConfig};
use gpnn_core::KernelSpec;

#[derive(Parser)]
#[command(
    name = "gpnn",
    version,
    about = "Nearest-neighbour GP regression experiments"
)]
struct Cli {
    /// Worker threads; defaults to all cores.
    #[arg(long, global = true, env = "GPNN_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a single (n, d, seed) cell and print its records.
    Simulate(SimulateArgs),
    /// Run a full sweep and write records, fits, bounds and plots.
    Sweep(SweepArgs),
    /// Evaluate MSE and calibration bounds from a JSON parameter file.
    Bounds(QueryArgs),
    /// Smallest training size meeting an (epsilon, delta) guarantee.
    Samplesize(QueryArgs),
    /// Check the matrix inequalities on random instances.
    Validate(ValidateArgs),
    /// Refit convergence slopes from a records CSV.
    Fit(FitArgs),
    /// Compare GPnn with the neighbour average on a CSV dataset.
    Bench(BenchArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Desk,
    Reference,
}

#[derive(Clone, Copy, ValueEnum)]
enum EstimatorArg {
    Empirical,
    Expected,
}

#[derive(Clone, Copy, ValueEnum)]
enum AveragingArg {
    MeanThenLog,
    LogThenMean,
}

impl From<AveragingArg> for Averaging {
    fn from(a: AveragingArg) -> Self {
        match a {
            AveragingArg::MeanThenLog => Averaging::MeanThenLog,
            AveragingArg::LogThenMean => Averaging::LogThenMean,
        }
    }
}

/// Where the base configuration comes from.
#[derive(Args)]
struct ConfigSource {
    /// JSON experiment configuration.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in configuration used when no file is given.
    #[arg(long, value_enum, default_value = "desk")]
    preset: Preset,
}

impl ConfigSource {
    fn load(&self) -> Result<ExperimentConfig> {
        Ok(match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path)
                    .map_err(|e| config_error(format!("reading {}: {e}", path.display())))?;
                ExperimentConfig::from_json(&text)?
            }
            None => match self.preset {
                Preset::Desk => ExperimentConfig::desk_scale(),
                Preset::Reference => ExperimentConfig::reference_scale(),
            },
        })
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    source: ConfigSource,
    /// Training size; defaults to the smallest in the grid.
    #[arg(long)]
    n: Option<usize>,
    /// Dimension; defaults to the first in the list.
    #[arg(long)]
    d: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    n_test: Option<usize>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long, value_enum)]
    estimator: Option<EstimatorArg>,
    /// Also write the training draw (inputs, latent field, targets) as CSV.
    #[arg(long)]
    export_data: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    source: ConfigSource,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long, value_delimiter = ',')]
    n_grid: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    d_list: Option<Vec<usize>>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    n_test: Option<usize>,
    #[arg(long, value_enum)]
    estimator: Option<EstimatorArg>,
    #[arg(long)]
    no_plots: bool,
    #[arg(long)]
    no_bounds: bool,
    #[arg(long)]
    include_knn: bool,
    #[arg(long)]
    record_timing: bool,
}

#[derive(Args)]
struct QueryArgs {
    /// JSON parameter file.
    #[arg(long)]
    params: PathBuf,
    /// Write the JSON result here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1000)]
    instances: usize,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    source: ConfigSource,
    /// Records CSV produced by `sweep`.
    #[arg(long)]
    records: PathBuf,
    #[arg(long, value_enum)]
    averaging: Option<AveragingArg>,
    /// Output fits CSV.
    #[arg(long, default_value = "fits.csv")]
    out: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    /// Headed numeric CSV.
    #[arg(long)]
    data: PathBuf,
    /// Target column name; defaults to the last column.
    #[arg(long)]
    target: Option<String>,
    #[arg(long)]
    no_standardise: bool,
    /// Model kernel as inline JSON; repeatable.
    #[arg(long)]
    kernel: Vec<String>,
    /// File holding a JSON array of model kernels.
    #[arg(long)]
    kernels: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    m: usize,
    /// Fraction of rows used for training.
    #[arg(long, default_value_t = 0.9)]
    split: f64,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4")]
    seeds: Vec<u64>,
    /// Write the JSON table here as well as printing it.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// A bad command line or input file, reported with exit code 2.
#[derive(Debug)]
struct ConfigError(String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn config_error(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

fn exit_code(err: &anyhow::Error) -> u8 {
    use gpnn_core::Error as E;
    for cause in err.chain() {
        if cause.is::<ConfigError>() || cause.is::<serde_json::Error>() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::Config(_)
                | E::Parameter { .. }
                | E::Parse { .. }
                | E::Json(_)
                | E::Domain(_) => 2,
                _ => 1,
            };
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let run = || -> Result<u8> {
        if let Some(t) = cli.threads {
            if t == 0 {
                return Err(config_error("--threads must be at least 1"));
            }
            rayon::ThreadPoolBuilder::new()
                .num_threads(t)
                .build_global()
                .context("building thread pool")?;
        }
        match &cli.command {
            Command::Simulate(a) => simulate_cmd(a),
            Command::Sweep(a) => sweep_cmd(a),
            Command::Bounds(a) => bounds_cmd(a),
            Command::Samplesize(a) => samplesize_cmd(a),
            Command::Validate(a) => validate_cmd(a),
            Command::Fit(a) => fit_cmd(a),
            Command::Bench(a) => bench_cmd(a),
        }
    };
    match run() {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn apply_estimator(cfg: &mut ExperimentConfig, e: Option<EstimatorArg>) {
    match e {
        Some(EstimatorArg::Empirical) => cfg.estimator = Estimator::Empirical,
        Some(EstimatorArg::Expected) => cfg.estimator = Estimator::Expected,
        None => {}
    }
}

fn emit_json(value: &impl serde::Serialize, out: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match out {
        Some(path) => {
            fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))?
        }
        None => {
            let mut stdout = std::io::stdout().lock();
            writeln!(stdout, "{text}")?;
        }
    }
    Ok(())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)
        .map_err(|e| config_error(format!("reading {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| config_error(format!("{}: {e}", path.display())))
}

fn simulate_cmd(a: &SimulateArgs) -> Result<u8> {
    let mut cfg = a.source.load()?;
    let n = a.n.unwrap_or(cfg.n_grid[0]);
    let d = a.d.unwrap_or(cfg.d_list[0]);
    cfg.n_grid = vec![n];
    cfg.d_list = vec![d];
    cfg.seeds = vec![a.seed];
    cfg.l_hat_grid = None;
    cfg.bounds.enabled = false;
    if let Some(t) = a.n_test {
        cfg.n_test = t;
    }
    if let Some(m) = a.m {
        cfg.m = MSpec::Fixed(m);
    }
    apply_estimator(&mut cfg, a.estimator);
    cfg.validate()?;

    if let Some(path) = &a.export_data {
        let sim = simulate::simulate(&FieldSampleConfig {
            kernel: cfg.generative,
            n_train: n,
            n_test: cfg.n_test,
            d,
            sampling_mode: cfg.sampling_mode,
            noise_family: cfg.noise_family,
            seed: data_seed(a.seed, d),
        })?;
        export_dataset(path, &sim.train, Some(&sim.latent[..n]))?;
    }

    let result = run_sweep(&cfg)?;
    write_records_to(std::io::stdout().lock(), &result.records)?;
    for f in &result.failures {
        eprintln!(
            "cell failed ({} n={} d={} seed={}): {}",
            f.kernel_model, f.n, f.d, f.seed, f.error
        );
    }
    Ok(u8::from(!result.failures.is_empty()))
}

fn sweep_cmd(a: &SweepArgs) -> Result<u8> {
    let mut cfg = a.source.load()?;
    if let Some(v) = &a.seeds {
        cfg.seeds = v.clone();
    }
    if let Some(v) = &a.n_grid {
        cfg.n_grid = v.clone();
    }
    if let Some(v) = &a.d_list {
        cfg.d_list = v.clone();
    }
    if let Some(m) = a.m {
        cfg.m = MSpec::Fixed(m);
    }
    if let Some(t) = a.n_test {
        cfg.n_test = t;
    }
    if let Some(dir) = &a.out {
        cfg.output.dir = dir.clone();
    }
    apply_estimator(&mut cfg, a.estimator);
    cfg.output.plots &= !a.no_plots;
    cfg.bounds.enabled &= !a.no_bounds;
    cfg.include_knn |= a.include_knn;
    cfg.record_timing |= a.record_timing;
    cfg.validate()?;

    let result = run_sweep(&cfg)?;
    let emitted = emit_outputs(&result, &cfg.output.dir, cfg.output.plots)?;
    eprintln!(
        "{} of {} cells evaluated, {} failed",
        result.records.len(),
        result.requested_cells,
        result.failures.len()
    );
    for note in &result.notes {
        eprintln!("note: {note}");
    }
    for fit in &result.fits {
        eprintln!(
            "d={} {} l_hat={}: slope {:.3} (reference {:.3}) {}",
            fit.d, fit.kernel_model, fit.l_hat, fit.slope, fit.reference_slope, fit.status
        );
    }
    eprintln!("records: {}", emitted.records.display());
    Ok(u8::from(!result.failures.is_empty()))
}

fn bounds_cmd(a: &QueryArgs) -> Result<u8> {
    let req: BoundsRequest = read_json(&a.params)?;
    emit_json(&evaluate_bounds(&req)?, a.out.as_deref())?;
    Ok(0)
}

fn samplesize_cmd(a: &QueryArgs) -> Result<u8> {
    let req: SampleSizeRequest = read_json(&a.params)?;
    emit_json(&evaluate_sample_size(&req)?, a.out.as_deref())?;
    Ok(0)
}

fn validate_cmd(a: &ValidateArgs) -> Result<u8> {
    if a.instances == 0 {
        return Err(config_error("--instances must be at least 1"));
    }
    let report = run_validation_suite(a.seed, a.instances)?;
    emit_json(&report, a.out.as_deref())?;
    for p in report.properties.iter().chain(&report.a1_sampling) {
        let ratio = if p.worst_ratio.is_finite() {
            format!(", worst ratio {:.3}", p.worst_ratio)
        } else {
            String::new()
        };
        eprintln!(
            "{:<24} {:>5}/{:<5} violations{ratio}",
            p.name, p.violations, p.checked
        );
    }
    for s in [&report.neumann, &report.quadratic_gap] {
        eprintln!(
            "{:<24} median ratio {:.2} (expected {}, {})",
            s.name,
            s.median,
            s.expected,
            if s.passed() {
                "within range"
            } else {
                "out of range"
            }
        );
    }
    Ok(0)
}

fn fit_cmd(a: &FitArgs) -> Result<u8> {
    let mut cfg = a.source.load()?;
    if let Some(av) = a.averaging {
        cfg.averaging = av.into();
    }
    let records = read_records(&a.records)?;
    let fits = refit(&cfg, &records)?;
    write_csv(&a.out, &FIT_COLUMNS, &fits)?;
    let failed = fits.iter().filter(|f| f.status != "ok").count();
    eprintln!(
        "{} fits written to {}, {failed} failed",
        fits.len(),
        a.out.display()
    );
    Ok(u8::from(failed > 0))
}

fn bench_cmd(a: &BenchArgs) -> Result<u8> {
    let mut models: Vec<KernelSpec> = a
        .kernel
        .iter()
        .map(|s| serde_json::from_str(s).map_err(|e| config_error(format!("--kernel {s}: {e}"))))
        .collect::<Result<_>>()?;
    if let Some(path) = &a.kernels {
        models.extend(read_json::<Vec<KernelSpec>>(path)?);
    }
    if models.is_empty() {
        return Err(config_error(
            "give at least one model kernel via --kernel or --kernels",
        ));
    }
    let target = a
        .target
        .clone()
        .map_or(TargetColumn::Last, TargetColumn::Name);
    let (data, _) = ingest_csv(&a.data, &target, !a.no_standardise)?;
    let table = run_benchmark(&data, &models, a.m, a.split, &a.seeds)?;
    print!("{}", table.to_text());
    if let Some(path) = &a.out {
        emit_json(&table, Some(path))?;
    }
    Ok(0)
}
