//! Command-line front end.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::ThreadPool;

use crate::config::NetworkConfig;
use crate::error::{Error, Result};
use crate::model::{capacity, evaluate, retry_cycles_s, ModelReport};
use crate::scenario::Scenario;
use crate::sim;
use crate::sweep::{format_sig, model_sweep_with, sim_sweep, validate, ModelPoint, SweepResult};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_CONFIG: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;
pub const EXIT_IO: i32 = 5;
pub const EXIT_INTERNAL: i32 = 6;

impl Error {
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => EXIT_CONFIG,
            Error::Domain(_) | Error::Numerical { .. } => EXIT_NUMERICAL,
            Error::Io(_) => EXIT_IO,
            Error::Internal(_) => EXIT_INTERNAL,
        }
    }
}

/// PER of LoRaWAN networks with capture: analytic model and simulator.
#[derive(Debug, Parser)]
#[command(name = "lorawan-capture", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Evaluate the analytic model over the load grid.
    Model(ModelArgs),
    /// Simulate every seed at every load of the grid.
    Simulate(SimulateArgs),
    /// Compare model and simulation up to the capacity bound.
    Validate(ValidateArgs),
    /// Print the capacity bound and each rate's share of it.
    Capacity(CommonArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Scenario file (TOML).
    #[arg(long)]
    pub scenario: PathBuf,
    /// Output file; overrides the scenario's `output.csv`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Evaluate a single load instead of the scenario grid.
    #[arg(long)]
    pub load: Option<f64>,
    /// Worker threads; 0 uses all cores.
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Per-rate breakdown CSV.
    #[arg(long)]
    pub rates: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Comma-separated seeds; overrides the scenario's list.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    /// Event trace CSV of the first seed at the first grid load.
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    /// Absolute PER tolerance.
    #[arg(long, default_value_t = 0.03)]
    pub tolerance: f64,
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run_from<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let to_stdout = !e.use_stderr();
            let text = e.render().to_string();
            let _ = if to_stdout {
                out.write_all(text.as_bytes())
            } else {
                err.write_all(text.as_bytes())
            };
            return if to_stdout { EXIT_OK } else { EXIT_USAGE };
        }
    };
    match execute(&cli, out, &evaluate) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

/// Model evaluator used by the sweep commands.
pub type Evaluator = dyn Fn(&NetworkConfig) -> Result<ModelReport> + Sync;

/// Runs a parsed command with the given model evaluator.
pub fn execute(cli: &Cli, out: &mut dyn Write, evaluator: &Evaluator) -> Result<i32> {
    let common = match &cli.command {
        Command::Model(a) => &a.common,
        Command::Simulate(a) => &a.common,
        Command::Validate(a) => &a.common,
        Command::Capacity(a) => a,
    };
    let mut scenario = Scenario::load(&common.scenario)?;
    if let Some(l) = common.load {
        if !(l.is_finite() && l >= 0.0) {
            return Err(Error::config(format!(
                "--load {l} must be finite and non-negative"
            )));
        }
        scenario.grid = vec![l];
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(common.jobs)
        .build()
        .map_err(|e| Error::Internal(e.to_string()))?;
    match &cli.command {
        Command::Model(a) => cmd_model(&scenario, a, out, evaluator, &pool),
        Command::Simulate(a) => cmd_simulate(&scenario, a, out, &pool),
        Command::Validate(a) => cmd_validate(&scenario, a, out, evaluator, &pool),
        Command::Capacity(a) => cmd_capacity(&scenario, a, out),
    }
}

fn seeds_or_default(scenario: &Scenario, seeds: &Option<Vec<u64>>) -> Result<Vec<u64>> {
    let s = seeds
        .clone()
        .unwrap_or_else(|| scenario.file.simulation.seeds.clone());
    if s.is_empty() {
        return Err(Error::config("no seeds given"));
    }
    Ok(s)
}

/// Writes to `path`, or to `out` when there is no path.
fn emit(
    path: Option<&Path>,
    out: &mut dyn Write,
    body: &dyn Fn(&mut dyn Write) -> Result<()>,
) -> Result<()> {
    match path {
        Some(p) => {
            let mut w = BufWriter::new(File::create(p)?);
            body(&mut w)?;
            w.flush()?;
            Ok(())
        }
        None => body(out),
    }
}

fn csv_path<'a>(scenario: &'a Scenario, common: &'a CommonArgs) -> Option<&'a Path> {
    common
        .out
        .as_deref()
        .or(scenario.file.output.csv.as_deref())
}

fn write_rates(path: &Path, points: &[ModelPoint]) -> Result<()> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    let io = |e: csv::Error| Error::Io(e.into());
    w.write_record(ModelReport::CSV_HEADER).map_err(io)?;
    for report in points.iter().flatten() {
        report.write_csv(&mut w).map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

pub fn cmd_model(
    scenario: &Scenario,
    args: &ModelArgs,
    out: &mut dyn Write,
    evaluator: &Evaluator,
    pool: &ThreadPool,
) -> Result<i32> {
    let (result, points) =
        pool.install(|| model_sweep_with(&scenario.network, &scenario.grid, evaluator));
    emit(csv_path(scenario, &args.common), out, &|w| {
        result.write_csv(w)
    })?;
    if let Some(p) = args
        .rates
        .as_deref()
        .or(scenario.file.output.rates_csv.as_deref())
    {
        write_rates(p, &points)?;
    }
    Ok(EXIT_OK)
}

pub fn cmd_simulate(
    scenario: &Scenario,
    args: &SimulateArgs,
    out: &mut dyn Write,
    pool: &ThreadPool,
) -> Result<i32> {
    let seeds = seeds_or_default(scenario, &args.seeds)?;
    if let Some(p) = &args.trace {
        let cfg = scenario.sim_config(scenario.grid[0], seeds[0])?;
        let mut w = BufWriter::new(File::create(p)?);
        sim::run_traced(&cfg, &mut w)?;
        w.flush()?;
    }
    let result = pool.install(|| sim_sweep(scenario, &seeds));
    emit(csv_path(scenario, &args.common), out, &|w| {
        result.write_csv(w)
    })?;
    Ok(EXIT_OK)
}

pub fn cmd_validate(
    scenario: &Scenario,
    args: &ValidateArgs,
    out: &mut dyn Write,
    evaluator: &Evaluator,
    pool: &ThreadPool,
) -> Result<i32> {
    let seeds = seeds_or_default(scenario, &args.seeds)?;
    let (model, _) =
        pool.install(|| model_sweep_with(&scenario.network, &scenario.grid, evaluator));
    let simulated = pool.install(|| sim_sweep(scenario, &seeds));
    let merged = SweepResult::merge(&model, &simulated)?;
    if let Some(p) = csv_path(scenario, &args.common) {
        emit(Some(p), out, &|w| merged.write_csv(w))?;
    }
    let report = validate(&merged, args.tolerance);
    for c in &report.checks {
        writeln!(
            out,
            "lambda {} gap {} allowed {} {}",
            format_sig(c.lambda_fps),
            format_sig(c.gap),
            format_sig(c.allowed),
            if c.pass { "pass" } else { "FAIL" }
        )?;
    }
    for l in &report.unusable {
        writeln!(out, "lambda {} not comparable FAIL", format_sig(*l))?;
    }
    if let Some(w) = report.worst() {
        writeln!(
            out,
            "worst gap {} at lambda {}",
            format_sig(w.gap),
            format_sig(w.lambda_fps)
        )?;
    }
    let passed = report.passed();
    writeln!(
        out,
        "validation {}",
        if passed { "passed" } else { "failed" }
    )?;
    Ok(if passed {
        EXIT_OK
    } else {
        EXIT_VALIDATION_FAILED
    })
}

pub fn cmd_capacity(scenario: &Scenario, args: &CommonArgs, out: &mut dyn Write) -> Result<i32> {
    let net = &scenario.network;
    let cap = capacity(net);
    let cycles = retry_cycles_s(net);
    let body = |w: &mut dyn Write| -> Result<()> {
        writeln!(w, "capacity_fps {}", format_sig(cap))?;
        writeln!(w, "rate,spreading_factor,p_i,cycle_s,weighted_cycle_s")?;
        for (i, (band, c)) in net.plan.bands.iter().zip(&cycles).enumerate() {
            writeln!(
                w,
                "{i},{},{},{},{}",
                scenario.file.network.rates[i].spreading_factor,
                format_sig(band.usage_prob),
                format_sig(*c),
                format_sig(band.usage_prob * c)
            )?;
        }
        Ok(())
    };
    emit(args.out.as_deref(), out, &body)?;
    Ok(EXIT_OK)
}
