use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mixcp_cli::{load_config, render, run, CliError, ExperimentConfig, ExperimentKind};

/// Conformal prediction experiments on dependent data.
#[derive(Parser)]
#[command(name = "mixcp", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Marginal coverage on two-state hidden Markov paths per dependence level.
    HmmCoverage(RunArgs),
    /// Marginal coverage on AR(1) paths per autoregressive coefficient.
    Ar1Coverage(RunArgs),
    /// Marginal correction η against calibration size.
    BoundCurves(RunArgs),
    /// Per-replication test coverage against the empirical floor.
    EmpiricalCoverage(RunArgs),
    /// Per-event conditional coverage across calibration sizes.
    ConditionalTable(RunArgs),
    /// Daily coverage of an online sliding-window backtest.
    Backtest(RunArgs),
    /// Risk-controlling prediction sets on synthetic iid data.
    RcpsDemo(RunArgs),
    /// Run whichever experiment the config names.
    Run(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// TOML config; defaults are used when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output CSV path; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config replication count.
    #[arg(long)]
    replications: Option<usize>,
}

fn resolve(kind: Option<ExperimentKind>, args: &RunArgs) -> Result<ExperimentConfig, CliError> {
    let mut cfg = match (&args.config, kind) {
        (Some(path), _) => load_config(path, kind)?,
        (None, Some(kind)) => ExperimentConfig::new(kind),
        (None, None) => return Err(CliError::Config("`run` needs --config".into())),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(r) = args.replications {
        cfg.replications = r;
    }
    if args.out.is_some() {
        cfg.output = args.out.clone();
    }
    cfg.resolve()
}

fn execute(kind: Option<ExperimentKind>, args: &RunArgs) -> Result<bool, CliError> {
    let cfg = resolve(kind, args)?;
    let report = run(&cfg)?;
    let text = render(&cfg, &report);
    match &cfg.output {
        Some(path) => std::fs::write(path, text)?,
        None => std::io::stdout().lock().write_all(text.as_bytes())?,
    }
    Ok(report.infeasible)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (kind, args) = match &cli.command {
        Command::HmmCoverage(a) => (Some(ExperimentKind::HmmCoverage), a),
        Command::Ar1Coverage(a) => (Some(ExperimentKind::Ar1Coverage), a),
        Command::BoundCurves(a) => (Some(ExperimentKind::BoundCurves), a),
        Command::EmpiricalCoverage(a) => (Some(ExperimentKind::EmpiricalCoverage), a),
        Command::ConditionalTable(a) => (Some(ExperimentKind::ConditionalTable), a),
        Command::Backtest(a) => (Some(ExperimentKind::Backtest), a),
        Command::RcpsDemo(a) => (Some(ExperimentKind::RcpsDemo), a),
        Command::Run(a) => (None, a),
    };
    match execute(kind, args) {
        Ok(false) => ExitCode::SUCCESS,
        Ok(true) => {
            eprintln!("mixcp: no feasible block plan for the requested bound");
            ExitCode::from(3)
        }
        Err(e) => {
            eprintln!("mixcp: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
