//! Commands behind the `sorts` binary.

pub mod plot;
pub mod summary;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use thiserror::Error;

use sorts_core::error::ConfigError;
use sorts_core::selfplay::{first_divergence, replay, EpisodeError};
use sorts_core::{EpisodeConfig, EpisodeResult, ExperimentSpec, PlannerKind, Runtime};

pub use summary::{write_summary, SummaryRow};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("replay diverges from the log at tick {tick}")]
    Mismatch { tick: u32 },
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) | CliError::Schema(_) => 1,
            CliError::Mismatch { .. } => 2,
            CliError::Internal(_) => 3,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Config(e.into())
    }
}

impl From<EpisodeError> for CliError {
    fn from(e: EpisodeError) -> Self {
        match e {
            EpisodeError::Config(c) => CliError::Config(c),
            other => CliError::Internal(other.to_string()),
        }
    }
}

fn internal(context: &str, e: impl std::fmt::Display) -> CliError {
    CliError::Internal(format!("{context}: {e}"))
}

pub const ALGORITHMS: [&str; 2] = ["sorts", "ablation"];

fn planner_for(algorithm: &str) -> PlannerKind {
    match algorithm {
        "sorts" => PlannerKind::Sorts,
        _ => PlannerKind::Ablation,
    }
}

/// One episode of a batch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Job {
    pub episode: u32,
    pub seed: u64,
    pub n_agents: usize,
    pub algorithm: &'static str,
}

impl Job {
    pub fn file_name(&self) -> String {
        format!("n{}-ep{:03}-{}.json", self.n_agents, self.episode, self.algorithm)
    }
}

/// Every (template, episode, algorithm) combination, in output order.
pub fn batch_jobs(spec: &ExperimentSpec) -> Vec<Job> {
    let mut jobs = Vec::new();
    for t in &spec.episodes {
        for i in 0..t.episodes {
            for algorithm in ALGORITHMS {
                jobs.push(Job {
                    episode: i,
                    seed: t.seed(i),
                    n_agents: t.n_agents,
                    algorithm,
                });
            }
        }
    }
    jobs
}

pub struct BatchReport {
    pub rows: Vec<SummaryRow>,
    pub failures: Vec<String>,
    pub summary_csv: PathBuf,
}

/// Runs every episode of the spec under both planners with identical seeds.
///
/// Episode files are written as they finish, so a failing episode leaves the others on disk.
pub fn cmd_selfplay(spec_path: &Path, out_dir: &Path, jobs: usize) -> Result<BatchReport, CliError> {
    let spec = ExperimentSpec::load(spec_path)?;
    let runtime = Arc::new(Runtime::new(spec.clone())?);
    let episodes_dir = out_dir.join("episodes");
    std::fs::create_dir_all(&episodes_dir).map_err(|e| internal("creating output directory", e))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| internal("thread pool", e))?;
    let work = batch_jobs(&spec);
    log::info!("running {} episodes with {} worker(s)", work.len(), jobs.max(1));
    let outcomes: Vec<Result<SummaryRow, String>> = pool.install(|| {
        work.par_iter()
            .map(|job| {
                let config = EpisodeConfig::uniform(job.n_agents, planner_for(job.algorithm), job.seed);
                let result = sorts_core::run_episode(runtime.clone(), config)
                    .map_err(|e| format!("{}: {e}", job.file_name()))?;
                let file = format!("episodes/{}", job.file_name());
                std::fs::write(out_dir.join(&file), result.to_json())
                    .map_err(|e| format!("{file}: {e}"))?;
                log::debug!("finished {file}");
                Ok(SummaryRow::from_result(job, &result, file))
            })
            .collect()
    });
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for o in outcomes {
        match o {
            Ok(r) => rows.push(r),
            Err(e) => {
                log::error!("{e}");
                failures.push(e);
            }
        }
    }
    let summary_csv = out_dir.join("summary.csv");
    write_summary(&rows, &summary_csv, &out_dir.join("summary.md"))
        .map_err(|e| internal("writing summary", e))?;
    Ok(BatchReport {
        rows,
        failures,
        summary_csv,
    })
}

/// Re-simulates a logged episode, writing one decision record per line to `out`.
pub fn cmd_replay(path: &Path, out: &mut dyn Write) -> Result<EpisodeResult, CliError> {
    let text = std::fs::read_to_string(path)?;
    let logged = EpisodeResult::from_json(&text).map_err(|e| match e {
        ConfigError::Schema(m) => CliError::Schema(m),
        ConfigError::Parse { .. } => CliError::Schema(e.to_string()),
        other => CliError::Config(other),
    })?;
    let fresh = replay(&logged)?;
    for d in &fresh.decisions {
        let line = serde_json::to_string(d).map_err(|e| internal("encoding decision", e))?;
        writeln!(out, "{line}").map_err(|e| internal("writing output", e))?;
    }
    match first_divergence(&logged, &fresh) {
        None => Ok(fresh),
        Some(tick) => Err(CliError::Mismatch { tick }),
    }
}
