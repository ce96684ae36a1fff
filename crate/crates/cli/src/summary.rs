//! Per-episode summary rows and the aggregated results table.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sorts_core::{EpisodeResult, Outcome};

use crate::Job;

/// Column order of `summary.csv`.
pub const COLUMNS: [&str; 10] = [
    "episode",
    "seed",
    "n_agents",
    "algorithm",
    "success_pct",
    "ls_pct",
    "timeout_pct",
    "offtrack_pct",
    "mean_re_km",
    "file",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub episode: u32,
    pub seed: u64,
    pub n_agents: usize,
    pub algorithm: String,
    pub success_pct: f64,
    pub ls_pct: f64,
    pub timeout_pct: f64,
    pub offtrack_pct: f64,
    /// Mean reference error of the aircraft that landed; empty when none did.
    pub mean_re_km: Option<f64>,
    /// Episode file relative to the summary.
    pub file: String,
}

fn pct(count: usize, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        100.0 * count as f64 / n as f64
    }
}

impl SummaryRow {
    pub fn from_result(job: &Job, r: &EpisodeResult, file: String) -> Self {
        let n = r.agents.len();
        let landed: Vec<f64> = r
            .agents
            .iter()
            .filter(|a| a.outcome == Outcome::Success)
            .map(|a| a.reference_error)
            .collect();
        Self {
            episode: job.episode,
            seed: job.seed,
            n_agents: n,
            algorithm: job.algorithm.to_string(),
            success_pct: pct(r.count(Outcome::Success), n),
            ls_pct: pct(r.count(Outcome::FailLs), n),
            timeout_pct: pct(r.count(Outcome::FailTimeout), n),
            offtrack_pct: pct(r.count(Outcome::FailOfftrack), n),
            mean_re_km: (!landed.is_empty()).then(|| landed.iter().sum::<f64>() / landed.len() as f64),
            file,
        }
    }
}

/// Pooled outcome rates for one agent count and algorithm.
#[derive(Debug, Clone, PartialEq)]
pub struct TableCell {
    pub episodes: usize,
    pub success_pct: f64,
    pub ls_pct: f64,
    pub timeout_pct: f64,
    pub offtrack_pct: f64,
    pub mean_re_km: Option<f64>,
}

/// Aggregates rows by (agent count, algorithm).
pub fn aggregate(rows: &[SummaryRow]) -> BTreeMap<(usize, String), TableCell> {
    let mut groups: BTreeMap<(usize, String), Vec<&SummaryRow>> = BTreeMap::new();
    for r in rows {
        groups.entry((r.n_agents, r.algorithm.clone())).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|(k, rs)| {
            let m = rs.len() as f64;
            let mean = |f: fn(&SummaryRow) -> f64| rs.iter().map(|r| f(r)).sum::<f64>() / m;
            // weight each episode's landed-aircraft mean by its number of landings
            let mut re_sum = 0.0;
            let mut landed = 0.0;
            for r in &rs {
                if let Some(re) = r.mean_re_km {
                    let count = r.success_pct / 100.0 * r.n_agents as f64;
                    re_sum += re * count;
                    landed += count;
                }
            }
            let cell = TableCell {
                episodes: rs.len(),
                success_pct: mean(|r| r.success_pct),
                ls_pct: mean(|r| r.ls_pct),
                timeout_pct: mean(|r| r.timeout_pct),
                offtrack_pct: mean(|r| r.offtrack_pct),
                mean_re_km: (landed > 0.0).then(|| re_sum / landed),
            };
            (k, cell)
        })
        .collect()
}

/// Markdown results table: one row per agent count, success and failure breakdown per algorithm.
pub fn markdown_table(rows: &[SummaryRow]) -> String {
    let cells = aggregate(rows);
    let mut s = String::new();
    s.push_str("| Agents | Algorithm | Episodes | Success % | LS % | Timeout % | Offtrack % | RE (km) |\n");
    s.push_str("|---|---|---|---|---|---|---|---|\n");
    for ((n, algo), c) in &cells {
        let re = c.mean_re_km.map_or("-".to_string(), |v| format!("{v:.2}"));
        let _ = writeln!(
            s,
            "| {n} | {algo} | {} | {:.1} | {:.1} | {:.1} | {:.1} | {re} |",
            c.episodes, c.success_pct, c.ls_pct, c.timeout_pct, c.offtrack_pct
        );
    }
    s
}

pub fn write_summary(rows: &[SummaryRow], csv_path: &Path, md_path: &Path) -> Result<(), Box<dyn std::error::Error>> {
    let mut w = csv::Writer::from_path(csv_path)?;
    if rows.is_empty() {
        w.write_record(COLUMNS)?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    std::fs::write(md_path, markdown_table(rows))?;
    Ok(())
}

pub fn read_summary(path: &Path) -> Result<Vec<SummaryRow>, crate::CliError> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| crate::CliError::Config(io_error(e)))?;
    let headers = rdr
        .headers()
        .map_err(|e| crate::CliError::Schema(e.to_string()))?
        .clone();
    let missing: Vec<&str> = COLUMNS
        .iter()
        .copied()
        .filter(|c| !headers.iter().any(|h| h == *c))
        .collect();
    if !missing.is_empty() {
        return Err(crate::CliError::Schema(format!(
            "summary is missing column(s) {}",
            missing.join(", ")
        )));
    }
    rdr.deserialize()
        .collect::<Result<Vec<SummaryRow>, _>>()
        .map_err(|e| crate::CliError::Schema(e.to_string()))
}

fn io_error(e: csv::Error) -> sorts_core::ConfigError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => io.into(),
        other => sorts_core::ConfigError::Invalid(format!("{other:?}")),
    }
}
