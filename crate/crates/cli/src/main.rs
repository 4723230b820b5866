use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rosbid_core::check::{broken_auction, run_checks, Suite};
use rosbid_core::report::write_report;
use rosbid_core::sim::run_experiment;
use rosbid_core::{ExperimentConfig, SimError};

const EXIT_CONFIG: u8 = 1;
const EXIT_RUNTIME: u8 = 2;
const EXIT_CHECK: u8 = 3;

#[derive(Parser)]
#[command(
    name = "rosbid",
    version,
    about = "Autobidding experiments under return-on-spend and budget constraints"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every horizon of an experiment and write per-trial results.
    Run(RunArgs),
    /// Like `run`, plus `sweep.csv` and a regret slope across horizons.
    Sweep(RunArgs),
    /// Run the built-in numerical property suites.
    Check(CheckArgs),
}

#[derive(Args)]
struct RunArgs {
    /// TOML experiment configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output_dir` from the configuration.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (defaults to the number of available cores).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct CheckArgs {
    /// Run a single suite: truthfulness, bregman, lambda or oracle.
    #[arg(long)]
    suite: Option<Suite>,
    /// Add a non-truthful auction to the truthfulness suite.
    #[arg(long, hide = true)]
    inject_broken_auction: bool,
}

fn default_threads() -> usize {
    std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
}

fn run(args: &RunArgs, sweep: bool) -> ExitCode {
    let config = match ExperimentConfig::load(&args.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {}: {e}", args.config.display());
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    let threads = match args.threads {
        Some(0) => {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(EXIT_CONFIG);
        }
        Some(n) => n,
        None => default_threads(),
    };
    let report = match run_experiment(&config, threads) {
        Ok(r) => r,
        Err(SimError::Config(msg)) => {
            eprintln!("error: {msg}");
            return ExitCode::from(EXIT_CONFIG);
        }
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_RUNTIME);
        }
    };
    let out: &Path = args.out.as_deref().unwrap_or(&config.output_dir);
    if let Err(e) = write_report(&report, out, sweep) {
        eprintln!("error: writing results to {}: {e}", out.display());
        return ExitCode::from(EXIT_RUNTIME);
    }

    println!(
        "policy {}  seed {}  beta_hat {:.4}",
        config.policy, config.seed, report.beta_hat
    );
    if report.beta_warning {
        eprintln!(
            "warning: estimated truthful slack {:.4} is small; the buffer phase may not finish",
            report.beta_hat
        );
    }
    println!(
        "{:>8} {:>14} {:>12} {:>14} {:>14} {:>10}  oracle",
        "T", "mean_regret", "std_regret", "mean_violation", "max_violation", "violations"
    );
    for h in &report.horizons {
        println!(
            "{:>8} {:>14.4} {:>12.4} {:>14.4} {:>14.4} {:>10}  {}",
            h.horizon,
            h.mean_regret,
            h.std_regret,
            h.mean_violation,
            h.max_violation,
            h.ros_violations,
            h.oracle_method.name()
        );
    }
    if sweep {
        match report.slope {
            Some(s) => println!("log-log regret slope {s:.4}"),
            None => println!("log-log regret slope: n/a"),
        }
    }
    println!("results written to {}", out.display());
    ExitCode::SUCCESS
}

fn check(args: &CheckArgs) -> ExitCode {
    let extra = if args.inject_broken_auction {
        vec![broken_auction()]
    } else {
        Vec::new()
    };
    let reports = run_checks(args.suite, &extra);
    let mut ok = true;
    for r in &reports {
        println!(
            "{:<13} {}  cases {:>6}  max residual {:.3e}  (tolerance {:.0e})",
            r.suite.name(),
            if r.passed { "PASS" } else { "FAIL" },
            r.cases,
            r.max_residual,
            r.tolerance
        );
        for f in &r.failures {
            eprintln!("  {}: {f}", r.suite.name());
        }
        ok &= r.passed;
    }
    if ok {
        ExitCode::SUCCESS
    } else {
        let failed: Vec<_> = reports
            .iter()
            .filter(|r| !r.passed)
            .map(|r| r.suite.name())
            .collect();
        eprintln!("error: failing suites: {}", failed.join(", "));
        ExitCode::from(EXIT_CHECK)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match &cli.command {
        Command::Run(args) => run(args, false),
        Command::Sweep(args) => run(args, true),
        Command::Check(args) => check(args),
    }
}
