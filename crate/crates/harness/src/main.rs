//! Command-line entry point.
//!
//! Exit codes: 0 when all requested episodes ran (landing success is data,
//! not an exit condition), 2 for configuration errors, 3 for detector
//! bridge failures, 1 for internal errors.

use std::fs;
use std::io::{stdin, stdout};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, Subcommand};
use mavland::bridge::run_echo_detector;
use mavland::config::{parse_scenario, ConfigError};
use mavland::runner::{
    any_detector_fault, run_batch, run_sweep, DetectorSpec, RunOptions, RunnerError,
};

#[derive(Parser)]
#[command(name = "mavland", version, about = "Vision-guided MAV landing simulation harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one batch of seeded episodes and write metrics + trajectories.
    Run {
        /// Scenario file (TOML).
        config: PathBuf,
        /// Run seeds 0..N instead of the scenario's seed list.
        #[arg(long)]
        seeds: Option<u64>,
        /// Parallel episodes.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Detection source: synthetic, exec:<cmd>, or tcp:<host>:<port>.
        #[arg(long, default_value = "synthetic")]
        detector: String,
        /// Output directory for metrics.csv and trajectory files.
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Poll deadline for external detectors (ms); default one camera tick.
        #[arg(long)]
        detector_timeout_ms: Option<u64>,
    },
    /// Re-run the batch for each value of one numeric config key.
    Sweep {
        config: PathBuf,
        /// Dotted config key, e.g. noise.corner_sigma.
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',')]
        values: Vec<f64>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Ground-truth echo detector for bridge testing: reads FRAME lines on
    /// stdin, answers DET lines on stdout.
    EchoDetector {
        config: PathBuf,
        /// Override the scenario's detector seed.
        #[arg(long)]
        seed: Option<u64>,
    },
}

const EXIT_CONFIG: u8 = 2;
const EXIT_BRIDGE: u8 = 3;

fn main() -> ExitCode {
    env_logger::init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            match err {
                RunnerError::Config(_) => ExitCode::from(EXIT_CONFIG),
                RunnerError::Bridge(_) => ExitCode::from(EXIT_BRIDGE),
                RunnerError::Episode(_) | RunnerError::Io(_) => ExitCode::FAILURE,
            }
        }
    }
}

fn load(path: &PathBuf) -> Result<String, RunnerError> {
    fs::read_to_string(path).map_err(RunnerError::Io)
}

fn run(cli: Cli) -> Result<ExitCode, RunnerError> {
    match cli.command {
        Command::Run {
            config,
            seeds,
            jobs,
            detector,
            out,
            detector_timeout_ms,
        } => {
            let file = parse_scenario(&load(&config)?)?;
            let detector: DetectorSpec = detector
                .parse()
                .map_err(|e: String| RunnerError::Config(ConfigError::BadParameter(e)))?;
            let opts = RunOptions {
                seeds: seeds.map(|n| (0..n).collect()),
                jobs,
                detector,
                out_dir: out,
                detector_timeout: detector_timeout_ms.map(Duration::from_millis),
            };
            let batch = run_batch(&file, &opts)?;
            mavland::runner::write_summary(&mut stdout(), &batch.metrics_path, &batch.aggregate)?;
            if any_detector_fault(&batch.rows) {
                eprintln!("error: one or more episodes aborted on a detector bridge fault");
                return Ok(ExitCode::from(EXIT_BRIDGE));
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Sweep {
            config,
            param,
            values,
            jobs,
            out,
        } => {
            let text = load(&config)?;
            let opts = RunOptions {
                jobs,
                out_dir: out,
                ..RunOptions::default()
            };
            let rows = run_sweep(&text, &param, &values, &opts)?;
            for row in &rows {
                println!("{param}={} {}", row.value, row.aggregate.summary_line());
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::EchoDetector { config, seed } => {
            let file = parse_scenario(&load(&config)?)?;
            let scenario = file.to_scenario(seed)?;
            run_echo_detector(&scenario, stdin().lock(), stdout().lock())
                .map_err(|e| RunnerError::Bridge(e.to_string()))?;
            Ok(ExitCode::SUCCESS)
        }
    }
}
