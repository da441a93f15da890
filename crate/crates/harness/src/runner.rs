//! Batch episode runner: one episode per seed, metrics and trajectory CSV
//! artifacts, aggregate statistics, and parameter sweeps.
//!
//! Episodes may run in parallel (`jobs`), but rows are always emitted in
//! seed order and each episode is independently seeded, so `metrics.csv` is
//! byte-identical across runs regardless of scheduling.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use mavland_core::episode::{run_episode, run_episode_with, EpisodeError, EpisodeResult};
use rayon::prelude::*;
use thiserror::Error;

use crate::bridge::{BridgeBackend, DetectorSession};
use crate::config::{ConfigError, ScenarioFile};

/// Where detections come from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DetectorSpec {
    Synthetic,
    /// Spawn this shell command per episode and talk over its stdio.
    Exec(String),
    /// Connect to `host:port` per episode.
    Tcp(String),
}

impl FromStr for DetectorSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "synthetic" {
            Ok(Self::Synthetic)
        } else if let Some(cmd) = s.strip_prefix("exec:") {
            Ok(Self::Exec(cmd.to_string()))
        } else if let Some(addr) = s.strip_prefix("tcp:") {
            Ok(Self::Tcp(addr.to_string()))
        } else {
            Err(format!(
                "unknown detector spec `{s}` (expected synthetic, exec:<cmd>, or tcp:<host>:<port>)"
            ))
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    /// Override of the scenario's seed list.
    pub seeds: Option<Vec<u64>>,
    pub jobs: usize,
    pub detector: DetectorSpec,
    pub out_dir: PathBuf,
    /// Poll deadline for external detectors; defaults to one camera tick.
    pub detector_timeout: Option<Duration>,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            seeds: None,
            jobs: 1,
            detector: DetectorSpec::Synthetic,
            out_dir: PathBuf::from("out"),
            detector_timeout: None,
        }
    }
}

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("episode failed: {0}")]
    Episode(#[from] EpisodeError),
    #[error("io error: {0}")]
    Io(#[from] io::Error),
    #[error("detector bridge failure: {0}")]
    Bridge(String),
}

#[derive(Debug, Clone)]
pub struct EpisodeRow {
    pub seed: u64,
    pub result: EpisodeResult,
}

/// Aggregate over one batch. Error and time statistics cover successful
/// episodes; the success rate covers all of them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aggregate {
    pub episodes: usize,
    pub successes: usize,
    pub success_rate: f64,
    pub mean_error_m: f64,
    pub std_error_m: f64,
    pub mean_time_s: f64,
    pub std_time_s: f64,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

impl Aggregate {
    pub fn from_rows(rows: &[EpisodeRow]) -> Self {
        let successes: Vec<&EpisodeRow> = rows.iter().filter(|r| r.result.success).collect();
        let errors: Vec<f64> = successes.iter().map(|r| r.result.final_error_m).collect();
        let times: Vec<f64> = successes.iter().map(|r| r.result.landing_time_s).collect();
        let (mean_error_m, std_error_m) = mean_std(&errors);
        let (mean_time_s, std_time_s) = mean_std(&times);
        Self {
            episodes: rows.len(),
            successes: successes.len(),
            success_rate: if rows.is_empty() {
                f64::NAN
            } else {
                successes.len() as f64 / rows.len() as f64
            },
            mean_error_m,
            std_error_m,
            mean_time_s,
            std_time_s,
        }
    }

    pub fn summary_line(&self) -> String {
        format!(
            "episodes={} successes={} success_rate={:.3} mean_error_m={:.4} std_error_m={:.4} mean_time_s={:.2} std_time_s={:.2}",
            self.episodes,
            self.successes,
            self.success_rate,
            self.mean_error_m,
            self.std_error_m,
            self.mean_time_s,
            self.std_time_s
        )
    }
}

#[derive(Debug)]
pub struct BatchOutput {
    pub rows: Vec<EpisodeRow>,
    pub aggregate: Aggregate,
    pub metrics_path: PathBuf,
}

fn run_one(
    file: &ScenarioFile,
    seed: u64,
    opts: &RunOptions,
) -> Result<EpisodeResult, RunnerError> {
    let scenario = file.to_scenario(Some(seed))?;
    match &opts.detector {
        DetectorSpec::Synthetic => Ok(run_episode(&scenario)?),
        DetectorSpec::Exec(cmd) => {
            let deadline = opts
                .detector_timeout
                .unwrap_or_else(|| Duration::from_secs_f64(scenario.camera.frame.dt()));
            let session = DetectorSession::spawn(cmd, deadline)
                .map_err(|e| RunnerError::Bridge(format!("failed to spawn `{cmd}`: {e}")))?;
            let mut backend = BridgeBackend::new(session);
            Ok(run_episode_with(&scenario, &mut backend)?)
        }
        DetectorSpec::Tcp(addr) => {
            let deadline = opts
                .detector_timeout
                .unwrap_or_else(|| Duration::from_secs_f64(scenario.camera.frame.dt()));
            let session = DetectorSession::connect_tcp(addr, deadline)
                .map_err(|e| RunnerError::Bridge(format!("failed to connect to {addr}: {e}")))?;
            let mut backend = BridgeBackend::new(session);
            Ok(run_episode_with(&scenario, &mut backend)?)
        }
    }
}

/// Runs the batch, writes `metrics.csv` and one trajectory CSV per seed into
/// `out_dir`, and returns the rows in seed order.
pub fn run_batch(file: &ScenarioFile, opts: &RunOptions) -> Result<BatchOutput, RunnerError> {
    let seeds = opts.seeds.clone().unwrap_or_else(|| file.seeds());
    fs::create_dir_all(&opts.out_dir)?;

    let jobs = opts.jobs.max(1);
    let results: Vec<Result<EpisodeRow, RunnerError>> = if jobs == 1 {
        seeds
            .iter()
            .map(|&seed| run_one(file, seed, opts).map(|result| EpisodeRow { seed, result }))
            .collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| RunnerError::Bridge(e.to_string()))?;
        pool.install(|| {
            seeds
                .par_iter()
                .map(|&seed| run_one(file, seed, opts).map(|result| EpisodeRow { seed, result }))
                .collect()
        })
    };

    let mut rows = Vec::with_capacity(results.len());
    for r in results {
        rows.push(r?);
    }

    let metrics_path = opts.out_dir.join("metrics.csv");
    fs::write(&metrics_path, metrics_csv(&rows))?;
    for row in &rows {
        let path = opts.out_dir.join(format!("trajectory_{}.csv", row.seed));
        fs::write(&path, trajectory_csv(&row.result))?;
    }

    Ok(BatchOutput {
        aggregate: Aggregate::from_rows(&rows),
        rows,
        metrics_path,
    })
}

pub fn metrics_csv(rows: &[EpisodeRow]) -> String {
    let mut out = String::from("seed,success,final_error_m,landing_time_s,mean_descent_speed_mps\n");
    for row in rows {
        let r = &row.result;
        writeln!(
            out,
            "{},{},{},{},{}",
            row.seed, r.success, r.final_error_m, r.landing_time_s, r.mean_descent_speed_mps
        )
        .expect("string write");
    }
    out
}

pub fn trajectory_csv(result: &EpisodeResult) -> String {
    let mut out = String::from("t,x,y,z,yaw,phase,vx_cmd,vy_cmd,yaw_rate_cmd,z_setpoint\n");
    for s in &result.trajectory {
        let setpoint = match s.z_setpoint {
            Some(z) => z.to_string(),
            None => String::new(),
        };
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            s.t, s.x, s.y, s.z, s.yaw, s.phase, s.vx_cmd, s.vy_cmd, s.yaw_rate_cmd, setpoint
        )
        .expect("string write");
    }
    out
}

/// One aggregate row of a parameter sweep.
#[derive(Debug, Clone)]
pub struct SweepRow {
    pub value: f64,
    pub aggregate: Aggregate,
}

fn set_numeric_key(
    root: &mut toml::Value,
    dotted: &str,
    value: f64,
) -> Result<(), ConfigError> {
    let mut current = root;
    let parts: Vec<&str> = dotted.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let table = current
            .as_table_mut()
            .ok_or_else(|| ConfigError::BadParameter(dotted.to_string()))?;
        let entry = table
            .get_mut(*part)
            .ok_or_else(|| ConfigError::BadParameter(dotted.to_string()))?;
        if i + 1 == parts.len() {
            *entry = match entry {
                toml::Value::Integer(_) if value.fract() == 0.0 => {
                    toml::Value::Integer(value as i64)
                }
                toml::Value::Integer(_) | toml::Value::Float(_) => toml::Value::Float(value),
                _ => return Err(ConfigError::BadParameter(dotted.to_string())),
            };
            return Ok(());
        }
        current = entry;
    }
    Err(ConfigError::BadParameter(dotted.to_string()))
}

/// Runs one batch per parameter value and writes `sweep.csv` into `out_dir`.
/// `param` is a dotted key into the scenario file (e.g. `noise.corner_sigma`)
/// and must name an existing numeric field.
pub fn run_sweep(
    config_text: &str,
    param: &str,
    values: &[f64],
    opts: &RunOptions,
) -> Result<Vec<SweepRow>, RunnerError> {
    if values.is_empty() {
        return Err(ConfigError::BadParameter(format!("{param}: empty value list")).into());
    }
    let base: toml::Value = toml::from_str(config_text).map_err(ConfigError::Parse)?;
    fs::create_dir_all(&opts.out_dir)?;

    let mut rows = Vec::with_capacity(values.len());
    for (i, &value) in values.iter().enumerate() {
        let mut doc = base.clone();
        set_numeric_key(&mut doc, param, value)?;
        let file: ScenarioFile = doc.try_into().map_err(ConfigError::Parse)?;
        // Re-check ranges with the new value in place.
        file.to_scenario(None)?;
        let sub_opts = RunOptions {
            out_dir: opts.out_dir.join(format!("value_{i}")),
            ..opts.clone()
        };
        let batch = run_batch(&file, &sub_opts)?;
        rows.push(SweepRow {
            value,
            aggregate: batch.aggregate,
        });
    }

    let mut csv = String::from(
        "param,value,episodes,successes,success_rate,mean_error_m,std_error_m,mean_time_s,std_time_s\n",
    );
    for row in &rows {
        let a = &row.aggregate;
        writeln!(
            csv,
            "{},{},{},{},{},{},{},{},{}",
            param,
            row.value,
            a.episodes,
            a.successes,
            a.success_rate,
            a.mean_error_m,
            a.std_error_m,
            a.mean_time_s,
            a.std_time_s
        )
        .expect("string write");
    }
    fs::write(opts.out_dir.join("sweep.csv"), csv)?;
    Ok(rows)
}

/// True when any episode in the batch was aborted by a detector fault;
/// distinguishes infrastructure failure (exit 3) from experimental outcome.
pub fn any_detector_fault(rows: &[EpisodeRow]) -> bool {
    rows.iter().any(|r| r.result.detector_fault.is_some())
}

pub fn write_summary(out: &mut impl io::Write, path: &Path, aggregate: &Aggregate) -> io::Result<()> {
    writeln!(out, "{}", aggregate.summary_line())?;
    writeln!(out, "metrics: {}", path.display())
}
