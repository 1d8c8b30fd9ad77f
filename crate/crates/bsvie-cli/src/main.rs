//! Command-line front end: training runs, checkpoint evaluation, and the
//! benchmark reproduction studies, all as config-driven batch jobs that
//! emit CSV files plus a human-readable summary under a per-run output
//! directory with a manifest.

mod jobs;

use bsvie::config::RunConfig;
use bsvie::error::Error;
use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "bsvie", version, about = "Neural-field solver for FSDE-BSVIE systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct CommonOpts {
    /// Problem id (example1a, example1b, example2, example3)
    #[arg(long)]
    problem: Option<String>,
    /// Scale profile: desk or paper
    #[arg(long)]
    profile: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Number of time steps N
    #[arg(long)]
    grid_n: Option<usize>,
    /// Config file (key = value lines); flags override file entries
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output root; the run writes into a fresh subdirectory
    #[arg(long, default_value = "runs")]
    out: PathBuf,
    /// Worker threads (0 = rayon default)
    #[arg(long)]
    threads: Option<usize>,
    /// State dimension override (multiplicative-noise family)
    #[arg(long)]
    dim: Option<usize>,
    /// Drift coupling weight override (fully coupled problem)
    #[arg(long)]
    coupling_b: Option<f64>,
    /// Evaluation path count
    #[arg(long)]
    m_eval: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Train the two fields on a benchmark problem
    Train(TrainArgs),
    /// Evaluate a checkpoint (or the closed-form bypass) against references
    Eval(EvalArgs),
    /// Re-run a benchmark study and emit plot-ready CSV bundles
    Reproduce(ReproduceArgs),
    /// Re-execute a run from its manifest
    Rerun(RerunArgs),
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: CommonOpts,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: CommonOpts,
    /// Checkpoint to evaluate
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Evaluate the closed-form fields instead of a checkpoint
    #[arg(long)]
    closed_form_bypass: bool,
    /// Also dump the evaluation paths as CSV
    #[arg(long)]
    dump_paths: bool,
}

#[derive(Args)]
struct ReproduceArgs {
    /// Target: fig4, fig5, table1, example2, example3, stability
    target: String,
    #[command(flatten)]
    common: CommonOpts,
    /// Dimensions for table1, comma-separated
    #[arg(long)]
    dims: Option<String>,
}

#[derive(Args)]
struct RerunArgs {
    /// Manifest of the run to repeat
    #[arg(long)]
    manifest: PathBuf,
    /// Output root for the repeated run
    #[arg(long, default_value = "runs")]
    out: PathBuf,
}

fn build_config(common: &CommonOpts) -> Result<RunConfig, Error> {
    // Resolution order: defaults, profile, config file, specific flags —
    // later assignments win.
    let mut rc = RunConfig::default();
    if let Some(p) = &common.profile {
        rc.apply("profile", p)?;
    }
    if let Some(path) = &common.config {
        let text = std::fs::read_to_string(path)?;
        rc.apply_file(&text)?;
    }
    if let Some(p) = &common.problem {
        rc.apply("problem", p)?;
    }
    if let Some(s) = common.seed {
        rc.apply("seed", &s.to_string())?;
    }
    if let Some(n) = common.grid_n {
        rc.apply("grid_n", &n.to_string())?;
    }
    if let Some(t) = common.threads {
        rc.apply("threads", &t.to_string())?;
    }
    if let Some(d) = common.dim {
        rc.apply("dim", &d.to_string())?;
    }
    if let Some(b) = common.coupling_b {
        rc.apply("coupling_b", &b.to_string())?;
    }
    if let Some(m) = common.m_eval {
        rc.apply("m_eval", &m.to_string())?;
    }
    Ok(rc)
}

fn init_threads(threads: usize) {
    if threads > 0 {
        jobs::set_thread_pool(threads);
    }
}

fn run() -> Result<(), Error> {
    let cli = Cli::parse();
    match cli.command {
        Command::Train(args) => {
            let rc = build_config(&args.common)?;
            init_threads(rc.threads);
            jobs::cmd_train(&rc, &args.common.out)
        }
        Command::Eval(args) => {
            let mut rc = build_config(&args.common)?;
            if args.closed_form_bypass {
                rc.apply("closed_form_bypass", "true")?;
            }
            init_threads(rc.threads);
            jobs::cmd_eval(
                &rc,
                args.checkpoint.as_deref(),
                args.dump_paths,
                &args.common.out,
            )
        }
        Command::Reproduce(args) => {
            let rc = build_config(&args.common)?;
            init_threads(rc.threads);
            jobs::cmd_reproduce(&rc, &args.target, args.dims.as_deref(), &args.common.out)
        }
        Command::Rerun(args) => jobs::cmd_rerun(&args.manifest, &args.out),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            match err {
                Error::Config { .. } => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}
