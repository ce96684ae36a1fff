//! Experiment specification files.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::costmap::CostMapParams;
use crate::error::ConfigError;
use crate::planner::PlannerConfig;
use crate::reference::{PatternGeometry, ReferenceParams, RunwayPose, Sector};
use crate::social::build_predictor;

pub const SPEC_VERSION: &str = "v1";
pub const MAX_AGENTS: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AirportConfig {
    pub runway: RunwayPose,
    pub pattern: PatternGeometry,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictorConfig {
    pub name: String,
    #[serde(default)]
    pub params: serde_json::Value,
}

/// How aircraft enter an episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpawnConfig {
    /// Sectors agents may enter from; each episode draws distinct ones.
    pub sectors: Vec<Sector>,
    /// Uniform bearing jitter around the sector centre, degrees.
    pub bearing_jitter_deg: f64,
    /// km/s.
    pub airspeed: f64,
}

impl Default for SpawnConfig {
    fn default() -> Self {
        Self {
            sectors: Sector::ALL.to_vec(),
            bearing_jitter_deg: 15.0,
            airspeed: 0.04,
        }
    }
}

/// Real-time session settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LiveConfig {
    /// Wall-clock duration of one 20 s simulation tick, ms.
    pub tick_period_ms: u64,
    /// Share of the tick period each planner may spend.
    pub planner_budget_fraction: f64,
    /// Disconnected sessions keep running this long before pausing, ms.
    pub disconnect_grace_ms: u64,
    pub separation_d: f64,
    pub sectors: Vec<Sector>,
    /// Per-client outbound queue length; older snapshots are dropped when full.
    pub client_queue: usize,
    pub seed: u64,
}

impl Default for LiveConfig {
    fn default() -> Self {
        Self {
            tick_period_ms: 1000,
            planner_budget_fraction: 0.8,
            disconnect_grace_ms: 5000,
            separation_d: 0.3,
            sectors: vec![Sector::N, Sector::S, Sector::W],
            client_queue: 64,
            seed: 1,
        }
    }
}

/// A batch of episodes with a fixed agent count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpisodeTemplate {
    pub n_agents: usize,
    pub episodes: u32,
    pub seed_base: u64,
}

impl EpisodeTemplate {
    /// Seed of episode `index`.
    pub fn seed(&self, index: u32) -> u64 {
        self.seed_base + u64::from(index)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub version: String,
    pub name: String,
    pub airport: AirportConfig,
    pub costmap: CostMapParams,
    pub reference: ReferenceParams,
    pub predictor: PredictorConfig,
    pub planner: PlannerConfig,
    /// Weight of the reference prior in the single-step baseline.
    pub ablation_lambda: f64,
    /// Cross-track distance ending an episode for an aircraft, km.
    pub offtrack_limit: f64,
    pub spawn: SpawnConfig,
    #[serde(default)]
    pub live: LiveConfig,
    pub episodes: Vec<EpisodeTemplate>,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            version: SPEC_VERSION.into(),
            name: "default".into(),
            airport: AirportConfig {
                runway: RunwayPose::default(),
                pattern: PatternGeometry::default(),
            },
            costmap: CostMapParams::default(),
            reference: ReferenceParams::default(),
            predictor: PredictorConfig {
                name: crate::social::SurrogatePredictor::NAME.into(),
                params: serde_json::Value::Null,
            },
            planner: PlannerConfig::default(),
            ablation_lambda: 0.3,
            offtrack_limit: 3.0,
            spawn: SpawnConfig::default(),
            live: LiveConfig::default(),
            episodes: Vec::new(),
        }
    }
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError::Invalid(msg.into()))
}

fn distinct(sectors: &[Sector]) -> bool {
    sectors
        .iter()
        .enumerate()
        .all(|(i, s)| !sectors[..i].contains(s))
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.version != SPEC_VERSION {
            return Err(ConfigError::Schema(format!(
                "unsupported spec version {:?}, expected {SPEC_VERSION:?}",
                self.version
            )));
        }
        build_predictor(&self.predictor.name, &self.predictor.params, &self.reference)?;
        self.planner
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if !(0.0..=1.0).contains(&self.ablation_lambda) {
            return invalid("ablation_lambda must lie in [0, 1]");
        }
        if !(self.offtrack_limit > 0.0) {
            return invalid("offtrack_limit must be positive");
        }
        if self.spawn.sectors.is_empty() || !distinct(&self.spawn.sectors) {
            return invalid("spawn.sectors must be non-empty and distinct");
        }
        if !(self.spawn.airspeed > 0.0) || !(0.0..45.0).contains(&self.spawn.bearing_jitter_deg) {
            return invalid("spawn.airspeed must be positive and bearing_jitter_deg in [0, 45)");
        }
        let g = &self.airport.pattern;
        if ![g.pattern_altitude, g.downwind_offset, g.runway_length, g.final_length, g.entry_leg, g.spawn_radius]
            .iter()
            .all(|v| *v > 0.0)
        {
            return invalid("airport.pattern dimensions must be positive");
        }
        let c = &self.costmap;
        if !(c.noise_sigma >= 0.0 && c.sample_spacing > 0.0 && c.cell_size.iter().all(|v| *v > 0.0)) {
            return invalid("costmap: cell sizes and sample spacing must be positive");
        }
        let l = &self.live;
        if l.tick_period_ms == 0 || !(l.planner_budget_fraction > 0.0 && l.planner_budget_fraction <= 1.0) {
            return invalid("live: tick_period_ms must be positive and planner_budget_fraction in (0, 1]");
        }
        if l.sectors.len() < 2 || !distinct(&l.sectors) || l.client_queue == 0 || !(l.separation_d > 0.0) {
            return invalid("live: need at least two distinct sectors, a queue and a positive separation");
        }
        for (i, t) in self.episodes.iter().enumerate() {
            if t.n_agents == 0 || t.n_agents > MAX_AGENTS {
                return invalid(format!(
                    "episodes[{i}].n_agents = {} is outside 1..={MAX_AGENTS}",
                    t.n_agents
                ));
            }
            if t.n_agents > self.spawn.sectors.len() {
                return invalid(format!(
                    "episodes[{i}].n_agents = {} exceeds the {} spawn sectors",
                    t.n_agents,
                    self.spawn.sectors.len()
                ));
            }
        }
        Ok(())
    }

    pub fn from_json(s: &str) -> Result<Self, ConfigError> {
        let spec: ExperimentSpec = serde_json::from_str(s)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("spec serializes")
    }

    /// Reads and validates a spec file; the names of the bundled specs also resolve.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        match std::fs::read_to_string(path) {
            Ok(s) => Self::from_json(&s),
            Err(e) => match path.to_str().and_then(bundled) {
                Some(s) => Self::from_json(s),
                None => Err(e.into()),
            },
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), ConfigError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }
}

pub const BUNDLED: [(&str, &str); 3] = [
    ("paper-selfplay.json", include_str!("../../../configs/paper-selfplay.json")),
    ("smoke.json", include_str!("../../../configs/smoke.json")),
    ("live-default.json", include_str!("../../../configs/live-default.json")),
];

/// Text of a bundled spec by file name.
pub fn bundled(name: &str) -> Option<&'static str> {
    BUNDLED.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}

pub fn load_bundled(name: &str) -> Result<ExperimentSpec, ConfigError> {
    let text = bundled(name).ok_or_else(|| ConfigError::Invalid(format!("no bundled spec {name:?}")))?;
    ExperimentSpec::from_json(text)
}
