//! Batch front-end: configuration, preset selection, run orchestration,
//! persistence, and plot-data emission.
//!
//! Exit codes: 0 ok, 2 configuration error, 3 convergence shortfall
//! (partial artifacts are still written), 4 verification failure.

mod checks;
mod config;
mod solve;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::RunConfig;

#[derive(Parser)]
#[command(
    name = "leafspace",
    about = "Variational solver for Yamabe-type equations on weighted one-dimensional leaf spaces",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Find positive and sign-changing solutions and write run artifacts.
    Solve(RunArgs),
    /// Run verification suites and write report.json.
    Verify(VerifyArgs),
    /// Build a Clifford system and its Monte-Carlo quotient domain.
    Clifford(CliffordArgs),
    /// List the registered quotient presets.
    Presets,
}

#[derive(clap::Args)]
struct RunArgs {
    /// JSON run configuration; flags below override its fields.
    #[arg(long)]
    config: Option<String>,
    /// Preset id, e.g. "okon-sphere(2,2)" or "torus-factor".
    #[arg(long)]
    preset: Option<String>,
    /// Load the quotient from a domain JSON file instead of a preset.
    #[arg(long)]
    domain_file: Option<String>,
    #[arg(long)]
    out: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    resolution: Option<usize>,
    /// Total number of requested solutions (1 positive + k-1 sign-changing).
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    p: Option<f64>,
    /// Constant coefficient b.
    #[arg(long)]
    b: Option<f64>,
    /// Constant coefficient c.
    #[arg(long)]
    c: Option<f64>,
    /// Only search for the least-energy positive solution.
    #[arg(long)]
    positive_only: bool,
}

#[derive(clap::Args)]
struct VerifyArgs {
    #[arg(long)]
    config: Option<String>,
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    resolution: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<String>,
    /// Re-validate a previously written solutions.json.
    #[arg(long)]
    solutions: Option<String>,
    /// Comma-separated subset of: projection, contraction, embedding,
    /// symmetric-criticality, oracle-agreement, records.
    #[arg(long)]
    checks: Option<String>,
}

#[derive(clap::Args)]
struct CliffordArgs {
    #[arg(long)]
    q: usize,
    #[arg(long, default_value_t = 1)]
    copies: usize,
    #[arg(long, default_value_t = 200)]
    bins: usize,
    #[arg(long, default_value_t = 1_000_000)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "out")]
    out: String,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Solve(args) => run_solve(args),
        Command::Verify(args) => run_verify(args),
        Command::Clifford(args) => checks::cmd_clifford(&args.out, args.q, args.copies, args.bins, args.samples, args.seed),
        Command::Presets => {
            for (name, what) in leafspace::quotient::registry() {
                println!("{name:24} {what}");
            }
            Ok(0)
        }
    };
    match code {
        Ok(n) => ExitCode::from(n),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run_solve(args: RunArgs) -> anyhow::Result<u8> {
    let mut cfg = RunConfig::load(args.config.as_deref())?;
    if let Some(v) = args.preset {
        cfg.preset = v;
    }
    if let Some(v) = args.domain_file {
        cfg.domain_file = Some(v);
    }
    if let Some(v) = args.out {
        cfg.out_dir = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = args.resolution {
        cfg.resolution = v;
    }
    if let Some(v) = args.k {
        cfg.k = v;
    }
    if let Some(v) = args.p {
        cfg.p = v;
    }
    if let Some(v) = args.b {
        cfg.b = v;
    }
    if let Some(v) = args.c {
        cfg.c = v;
    }
    if args.positive_only {
        cfg.positive_only = true;
    }
    solve::cmd_solve(&cfg)
}

fn run_verify(args: VerifyArgs) -> anyhow::Result<u8> {
    let mut cfg = RunConfig::load(args.config.as_deref())?;
    if let Some(v) = args.preset {
        cfg.preset = v;
    }
    if let Some(v) = args.resolution {
        cfg.resolution = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = args.out {
        cfg.out_dir = v;
    }
    let selected: Vec<String> = args
        .checks
        .map(|s| s.split(',').map(|c| c.trim().to_string()).collect())
        .unwrap_or_default();
    checks::cmd_verify(&cfg, args.solutions.as_deref(), &selected)
}
