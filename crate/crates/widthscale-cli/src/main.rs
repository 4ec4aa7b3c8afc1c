//! `widthscale`: classify scalings, train networks, sweep widths, simulate limits, probe
//! exponents and compare limits by KL divergence.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Exit status for a scaling outside the dynamical stability band.
pub const EXIT_UNSTABLE: u8 = 2;
pub const EXIT_CONFIG: u8 = 3;
pub const EXIT_IO: u8 = 4;

#[derive(Debug, Parser)]
#[command(name = "widthscale", version, about = "Width-scaling laboratory for one-hidden-layer classifiers")]
pub struct Cli {
    /// Worker threads for sweeps (default: all cores; 1 runs serially).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Report stability, condition values, region and limit regime of a scaling.
    Classify(ClassifyArgs),
    /// Train every (width, seed) cell of a configuration and write metrics.csv.
    Train(RunArgs),
    /// Train across widths, probe initialization and fit width exponents.
    Sweep(RunArgs),
    /// Run the configured limit simulators and write limit.csv.
    Limit(RunArgs),
    /// Fit width exponents of logits, kernels and kernel increments.
    Probe(ProbeArgs),
    /// Compare limit simulators with the reference network by logit KL divergence.
    Kl(RunArgs),
    /// Check a directory of CIFAR-10 binary batches and report the airplane/automobile splits.
    IngestCheck(IngestArgs),
}

#[derive(Debug, Args)]
pub struct ClassifyArgs {
    #[arg(long, allow_hyphen_values = true, required_unless_present = "scaling")]
    pub q_sigma: Option<f64>,
    /// Learning-rate exponent shared by both layers.
    #[arg(long, allow_hyphen_values = true, required_unless_present = "scaling")]
    pub q_tilde: Option<f64>,
    /// Named scaling instead of exponents: ntk, mf, icmf, sym-default or default.
    #[arg(long, conflicts_with_all = ["q_sigma", "q_tilde"])]
    pub scaling: Option<String>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// JSON configuration; omitted keys take their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Set a configuration key, e.g. `widths=[128,256]` or `batch.size=32`.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Output directory (overrides the configuration's `out`).
    #[arg(long, env = "WIDTHSCALE_OUT")]
    pub out: Option<PathBuf>,
    /// Base seed mixed into every run seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct ProbeArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Named scaling to probe (overrides the configuration's exponents).
    #[arg(long)]
    pub scaling: Option<String>,
    /// Also probe after this many training steps.
    #[arg(long, default_value_t = 1)]
    pub steps: usize,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Directory holding data_batch_{1..5}.bin and test_batch.bin.
    #[arg(long)]
    pub dir: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build_global() {
            log::warn!("could not size the thread pool: {e}");
        }
    }
    match commands::run(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
