//! `cpbias`: run conformal tuning-bias experiments from JSON configs.
//!
//! Exit codes: 0 success, 1 usage or config error, 2 runtime error,
//! 3 invariant violation (for example a certified bound below the measured
//! bias).

mod config;
mod run;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde::Serialize;

use config::{parse_config, RunConfig};

/// Setting this variable to a non-empty value makes every run report an
/// invariant violation; used to test the exit-code path.
const FORCE_VIOLATION_ENV: &str = "CPTUNE_TEST_FORCE_VIOLATION";

#[derive(Parser, Debug)]
#[command(name = "cpbias", version, about = "Same-set versus hold-out tuning bias in split conformal prediction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug, Clone)]
enum Command {
    /// Coverage of the same-set arm against the finite-sample sandwich.
    CoverageCheck(Args),
    /// Tuning bias of one experiment cell.
    Bias(Args),
    /// Tuning bias across calibration sizes.
    SweepN(Args),
    /// Tuning bias across tuner complexity levels.
    SweepComplexity(Args),
    /// Sup-process estimate over the tuner's search grid.
    SupProcess(Args),
    /// Monte-Carlo check of the DKW inequality.
    Dkw(Args),
    /// Evaluate bound formulas.
    Bounds(Args),
    /// Conformalized quantile regression with model selection.
    Cqr(Args),
}

#[derive(clap::Args, Debug, Clone)]
struct Args {
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Overrides the seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Worker threads; defaults to the number of cores.
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    quiet: bool,
}

impl Command {
    fn kind(&self) -> &'static str {
        match self {
            Command::CoverageCheck(_) => "coverage-check",
            Command::Bias(_) => "bias",
            Command::SweepN(_) => "sweep-n",
            Command::SweepComplexity(_) => "sweep-complexity",
            Command::SupProcess(_) => "sup-process",
            Command::Dkw(_) => "dkw",
            Command::Bounds(_) => "bounds",
            Command::Cqr(_) => "cqr",
        }
    }

    fn args(&self) -> &Args {
        match self {
            Command::CoverageCheck(a)
            | Command::Bias(a)
            | Command::SweepN(a)
            | Command::SweepComplexity(a)
            | Command::SupProcess(a)
            | Command::Dkw(a)
            | Command::Bounds(a)
            | Command::Cqr(a) => a,
        }
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    kind: &'static str,
    config: &'a RunConfig,
    seed: Option<u64>,
    replications: Option<usize>,
    replication_seeds: &'a [u64],
    threads: usize,
    wall_time_secs: f64,
    outputs: &'a [String],
    status: &'static str,
    violations: &'a [String],
}

enum Failure {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let quiet = cli.command.args().quiet;
    env_logger::Builder::new()
        .filter_level(if quiet { log::LevelFilter::Error } else { log::LevelFilter::Info })
        .parse_env("CPBIAS_LOG")
        .format_timestamp(None)
        .init();
    match execute(cli.command) {
        Ok(violations) if violations.is_empty() => ExitCode::SUCCESS,
        Ok(violations) => {
            for v in violations {
                eprintln!("invariant violation: {v}");
            }
            ExitCode::from(3)
        }
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn execute(cmd: Command) -> Result<Vec<String>, Failure> {
    let args = cmd.args();
    let mut cfg = parse_config(&args.config).map_err(Failure::Usage)?;
    if cfg.kind() != cmd.kind() {
        return Err(Failure::Usage(anyhow::anyhow!(
            "config kind is {} but the subcommand is {}",
            cfg.kind(),
            cmd.kind()
        )));
    }
    if let Some(s) = args.seed {
        cfg.set_seed(s);
        cfg.validate().map_err(Failure::Usage)?;
    }
    let dir: PathBuf = args
        .out
        .clone()
        .or_else(|| cfg.out().map(Path::to_path_buf))
        .unwrap_or_else(|| PathBuf::from("out"));
    cfg.set_out(dir.clone());
    if let Some(n) = args.threads {
        if n == 0 {
            return Err(Failure::Usage(anyhow::anyhow!("--threads must be at least 1")));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Runtime(e.into()))?;
    }
    std::fs::create_dir_all(&dir)
        .map_err(|e| Failure::Runtime(anyhow::anyhow!("cannot create {}: {e}", dir.display())))?;

    let t = Instant::now();
    let mut outcome = run::run(&cfg, &dir).map_err(Failure::Runtime)?;
    if std::env::var_os(FORCE_VIOLATION_ENV).is_some_and(|v| !v.is_empty()) {
        outcome.violations.push(format!("forced by {FORCE_VIOLATION_ENV}"));
    }
    outcome.outputs.push("manifest.json".into());
    let manifest = Manifest {
        tool: "cpbias",
        version: env!("CARGO_PKG_VERSION"),
        kind: cfg.kind(),
        config: &cfg,
        seed: cfg.seed(),
        replications: cfg.replications(),
        replication_seeds: &outcome.replication_seeds,
        threads: rayon::current_num_threads(),
        wall_time_secs: t.elapsed().as_secs_f64(),
        outputs: &outcome.outputs,
        status: if outcome.violations.is_empty() { "ok" } else { "invariant_violation" },
        violations: &outcome.violations,
    };
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| Failure::Runtime(e.into()))?;
    std::fs::write(dir.join("manifest.json"), json + "\n").map_err(|e| Failure::Runtime(e.into()))?;
    Ok(outcome.violations)
}
