use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use drcbf_cli::config_io::parse_controller;
use drcbf_cli::selftest::InjectedBug;
use drcbf_cli::{cmd_compare, cmd_run, cmd_selftest, Overrides};

/// Risk-aware barrier-filtered control: run closed-loop scenarios, compare
/// controllers, and self-check the numerics. Set DRCBF_LOG=info (or debug)
/// for diagnostics on stderr; results go to files, stdout carries a
/// one-line summary.
#[derive(Parser)]
#[command(name = "drcbf", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Scenario JSON (or a previous run's manifest.json).
    #[arg(long)]
    scenario: PathBuf,
    /// Output directory for trajectory.csv, metrics.json, manifest.json.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Controller: cbf or drcbf.
    #[arg(long)]
    controller: Option<String>,
    /// Worst-case reformulation case: 1 or 2.
    #[arg(long)]
    case: Option<u8>,
    /// Confidence level in (0, 1).
    #[arg(long)]
    alpha: Option<f64>,
    /// Transport penalty coefficient.
    #[arg(long)]
    lambda: Option<f64>,
    /// Number of disturbance samples.
    #[arg(long)]
    samples: Option<usize>,
    /// Disturbance seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Integration step in seconds.
    #[arg(long)]
    dt: Option<f64>,
    /// Maximum number of steps.
    #[arg(long)]
    horizon: Option<usize>,
    /// Record measured solve times in the output files (off by default so
    /// identical runs produce identical bytes).
    #[arg(long)]
    timing: bool,
}

impl RunArgs {
    fn overrides(&self) -> Result<Overrides, String> {
        let controller = match &self.controller {
            Some(s) => Some(parse_controller(s).map_err(|e| e.to_string())?),
            None => None,
        };
        Ok(Overrides {
            controller,
            case: self.case,
            alpha: self.alpha,
            lambda: self.lambda,
            samples: self.samples,
            seed: self.seed,
            dt: self.dt,
            horizon: self.horizon,
            timing: self.timing,
        })
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario to termination and write its outputs.
    Run(RunArgs),
    /// Run both controllers on the same scenario and write a delta report.
    Compare(RunArgs),
    /// Cross-check the numerics against the built-in reference oracles.
    Selftest {
        /// Subsample the suites for a fast check.
        #[arg(long)]
        quick: bool,
        /// Corrupt a computation path to verify the suites detect it.
        #[arg(long, hide = true)]
        inject_bug: Option<String>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(
        env_logger::Env::new().filter_or("DRCBF_LOG", "error"),
    )
    .format_timestamp(None)
    .init();

    let cli = Cli::parse();
    let code = match cli.command {
        Command::Run(args) => match args.overrides() {
            Ok(overrides) => cmd_run(&args.scenario, &overrides, &args.out),
            Err(e) => {
                eprintln!("error: {e}");
                drcbf_cli::EXIT_VALIDATION
            }
        },
        Command::Compare(args) => match args.overrides() {
            Ok(overrides) => cmd_compare(&args.scenario, &overrides, &args.out),
            Err(e) => {
                eprintln!("error: {e}");
                drcbf_cli::EXIT_VALIDATION
            }
        },
        Command::Selftest { quick, inject_bug } => {
            let inject = match inject_bug.as_deref() {
                None => None,
                Some("gradient") => Some(InjectedBug::Gradient),
                Some(other) => {
                    eprintln!("error: unknown bug injection `{other}`");
                    return ExitCode::from(drcbf_cli::EXIT_VALIDATION as u8);
                }
            };
            cmd_selftest(quick, inject)
        }
    };
    ExitCode::from(code as u8)
}
