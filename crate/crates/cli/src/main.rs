//! `faas-sched`: generate workloads, run simulations, sweep parameters.
//!
//! Exit codes: 0 success, 2 configuration error, 3 tasks left unfinished
//! at the horizon, 4 I/O error.

mod cmd;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use faas_sched::PolicyKind;

/// Relative output paths are resolved under this directory when set.
pub const OUTPUT_ROOT_ENV: &str = "FAAS_SCHED_OUTPUT_ROOT";

#[derive(Debug, Parser)]
#[command(name = "faas-sched", version, about = "Serverless OS-scheduling simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a workload file plus a `.stats.json` summary next to it.
    Gen(GenArgs),
    /// Run one simulation and write tasks.csv, util.csv and summary.json.
    Sim(SimArgs),
    /// Run one simulation per grid point and compare them.
    Sweep(SweepArgs),
}

#[derive(Debug, Args)]
struct GenArgs {
    /// Generate a synthetic workload (the default source).
    #[arg(long, conflicts_with = "trace_durations")]
    synthetic: bool,
    #[arg(long, default_value_t = 12_442)]
    n: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 0.8)]
    short_fraction: f64,
    /// Arrival span in seconds.
    #[arg(long, default_value_t = 120.0)]
    span_s: f64,
    /// Share of arrivals inside burst episodes.
    #[arg(long, default_value_t = 0.5)]
    burst_fraction: f64,
    #[arg(long, default_value_t = 6)]
    burst_episodes: usize,

    /// Function-duration CSV of an Azure-format trace.
    #[arg(long, requires = "trace_invocations")]
    trace_durations: Option<PathBuf>,
    /// Per-minute invocation CSV of an Azure-format trace.
    #[arg(long, requires = "trace_durations")]
    trace_invocations: Option<PathBuf>,
    /// Optional `bucket_label,duration_ms` table.
    #[arg(long)]
    buckets: Option<PathBuf>,
    /// Divide per-minute counts by this factor.
    #[arg(long, default_value_t = 100)]
    scale: u32,
    /// Minute range `start..end` (end exclusive).
    #[arg(long, default_value = "0..2")]
    minutes: String,

    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Debug, Args, Clone, Default)]
struct SimOverrides {
    /// TOML experiment config; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Workload file; otherwise the config's source (default: synthetic).
    #[arg(long)]
    workload: Option<PathBuf>,
    #[arg(long)]
    policy: Option<PolicyKind>,
    /// Total cores in the enclave.
    #[arg(long)]
    cores: Option<usize>,
    #[arg(long)]
    fifo_cores: Option<usize>,
    #[arg(long)]
    cfs_cores: Option<usize>,
    /// FIFO continuous-runtime limit (also the initial adaptive limit).
    #[arg(long)]
    limit_ms: Option<f64>,
    #[arg(long)]
    slice_ms: Option<f64>,
    /// Adapt the limit to this percentile of recent execution times, e.g. `p95`.
    #[arg(long)]
    adapt_limit: Option<String>,
    /// Adaptation window length in tasks.
    #[arg(long)]
    window: Option<usize>,
    /// Move cores between groups to follow utilization.
    #[arg(long)]
    rightsize: bool,
    /// Price table; the built-in table otherwise.
    #[arg(long)]
    cost_table: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    horizon_ms: Option<f64>,
}

#[derive(Debug, Args)]
struct SimArgs {
    #[command(flatten)]
    base: SimOverrides,
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[command(flatten)]
    base: SimOverrides,
    /// FIFO core counts; the rest of the enclave runs CFS.
    #[arg(long, value_delimiter = ',')]
    fifo_cores_grid: Vec<usize>,
    /// Adaptation percentiles, e.g. `25,50,75,90,95`.
    #[arg(long, value_delimiter = ',')]
    percentile_grid: Vec<f64>,
    /// Policies to run side by side.
    #[arg(long, value_delimiter = ',')]
    policies: Vec<PolicyKind>,
    #[arg(long, value_enum, default_value_t = cmd::Objective::P99Exec)]
    objective: cmd::Objective,
    #[arg(long, short)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen(a) => cmd::gen(a),
        Command::Sim(a) => cmd::sim(a),
        Command::Sweep(a) => cmd::sweep(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            let mut msg = e.to_string();
            for cause in e.chain().skip(1) {
                let c = cause.to_string();
                if !msg.contains(&c) {
                    msg = format!("{msg}: {c}");
                }
            }
            eprintln!("error: {msg}");
            ExitCode::from(cmd::exit_code(&e))
        }
    }
}
