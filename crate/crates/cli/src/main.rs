mod commands;
mod config;
mod manifest;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use cacao_core::experiments::Method;
use clap::builder::{PossibleValuesParser, TypedValueParser};
use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

/// Bad flags, config keys, or missing required values. Exits with status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

const EXPERIMENTS: [&str; 4] = ["two-spin", "gap-scan", "benchmark-l3", "scaling"];

#[derive(Parser, Debug)]
#[command(
    name = "cacao",
    version,
    about = "Feedback-driven spin dynamics for Ising ground states"
)]
struct Cli {
    /// TOML config file, or a run manifest to replay.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Directory for results, summaries and manifests.
    #[arg(
        long,
        global = true,
        env = "CACAO_OUT_DIR",
        default_value = "cacao-out"
    )]
    out_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a random square-lattice clause instance.
    Generate(GenerateArgs),
    /// Run one solver on an instance or Ising file.
    Solve(SolveArgs),
    /// Run a scripted study.
    #[command(subcommand)]
    Experiment(ExperimentCmd),
}

fn parse_lattice(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(l) if l >= 2 => Ok(l),
        Ok(l) => Err(format!("L must be at least 2, got {l}")),
        Err(e) => Err(e.to_string()),
    }
}

fn method_parser() -> impl clap::builder::TypedValueParser<Value = Method> {
    PossibleValuesParser::new(Method::ALL.map(Method::as_str)).map(|s| s.parse().unwrap())
}

#[derive(Args, Debug)]
struct GenerateArgs {
    /// Lattice side length.
    #[arg(long = "L", value_parser = parse_lattice)]
    l: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Instance path; defaults to `<out-dir>/instance_L<L>_seed<seed>.json`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the expanded Ising model here.
    #[arg(long)]
    ising_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SolveArgs {
    #[arg(long, value_parser = method_parser())]
    method: Option<Method>,
    /// Clause instance or Ising model file.
    #[arg(long)]
    instance: Option<PathBuf>,
    /// Total evolution time.
    #[arg(long = "T")]
    t: Option<f64>,
    #[arg(long)]
    dt: Option<f64>,
    /// CACAO integrator.
    #[arg(long, value_parser = ["rotation", "rk4"])]
    scheme: Option<String>,
    /// Stop once every |mz| exceeds this value (CACAO).
    #[arg(long, conflicts_with = "stationary")]
    threshold: Option<f64>,
    /// Stop once sum of squared amplitudes drops below this value (CACAO).
    #[arg(long)]
    stationary: Option<f64>,
    #[arg(long)]
    record_every: Option<usize>,
    /// Add per-spin amplitude columns to the trajectory.
    #[arg(long)]
    record_controls: bool,
    /// Seed for random initial tilts (CACAO).
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    tilt_amplitude: Option<f64>,
    /// Run statevector methods above the qubit limit.
    #[arg(long)]
    force: bool,
    #[arg(long)]
    max_qubits: Option<usize>,
    /// Dump the final statevector (quantum methods).
    #[arg(long)]
    save_state: bool,
}

#[derive(Args, Debug, Default)]
struct SeedArgs {
    /// Number of instances; seeds default to 1..=N.
    #[arg(long)]
    instances: Option<usize>,
    /// Explicit instance seeds.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
}

#[derive(Subcommand, Debug)]
enum ExperimentCmd {
    /// Two-spin trajectories for one or more h2 values.
    TwoSpin {
        #[arg(long, value_delimiter = ',')]
        h2: Option<Vec<f64>>,
        #[arg(long = "T")]
        t: Option<f64>,
        #[arg(long)]
        dt: Option<f64>,
    },
    /// Convergence time versus gap with a power-law fit.
    GapScan {
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        min_gap: Option<f64>,
        #[arg(long)]
        max_gap: Option<f64>,
        #[arg(long)]
        count: Option<usize>,
        /// Explicit h2 values instead of the gap grid.
        #[arg(long, value_delimiter = ',')]
        h2: Option<Vec<f64>>,
        #[arg(long = "T")]
        t: Option<f64>,
        #[arg(long)]
        dt: Option<f64>,
    },
    /// Four-method comparison on L=3 instances.
    #[command(name = "benchmark-l3")]
    BenchmarkL3 {
        #[command(flatten)]
        seeds: SeedArgs,
        /// Operation times.
        #[arg(long, value_delimiter = ',')]
        times: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',', value_parser = method_parser())]
        methods: Option<Vec<Method>>,
        /// Step size for every method.
        #[arg(long)]
        dt: Option<f64>,
    },
    /// Mean energy per spin versus time across lattice sizes.
    Scaling {
        #[arg(long = "L", value_delimiter = ',', value_parser = parse_lattice)]
        l: Option<Vec<usize>>,
        #[command(flatten)]
        seeds: SeedArgs,
        #[arg(long = "T")]
        t: Option<f64>,
        #[arg(long)]
        dt: Option<f64>,
    },
}

fn exit_status(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.downcast_ref::<UsageError>().is_some() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<cacao_core::Error>() {
            return match e {
                cacao_core::Error::InvalidInput(_) => 2,
                cacao_core::Error::Capacity(_) => 3,
                cacao_core::Error::Numerical(_) => 4,
                _ => 1,
            };
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            if e.kind() == ErrorKind::InvalidSubcommand
                && std::env::args().any(|a| a == "experiment")
            {
                eprintln!("valid experiments: {}", EXPERIMENTS.join(", "));
            }
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match commands::dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_status(&e))
        }
    }
}
