//! Multi-aircraft landing episodes, termination rules and the two trajectory metrics.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::airspace::{
    distance, intermediate_states, primitive, separation, AgentState, NUM_PRIMITIVES, SUBSTEPS,
};
use crate::config::ExperimentSpec;
use crate::costmap::{build_costmap, CostMap, CostMapError};
use crate::error::ConfigError;
use crate::planner::{
    ablation_plan, search, AgentView, Decision, PlanError, PlannerConfig,
    PlanningContext, SearchTree, WorldSnapshot,
};
use crate::reference::{build_pattern_library, cross_track_error, ReferencePath, Sector};
use crate::social::{build_predictor, SocialPredictor, DEFAULT_HISTORY};
use crate::trajectory::Trajectory;

pub const RESULT_VERSION: &str = "v1";

#[derive(Debug, Error)]
pub enum EpisodeError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    CostMap(#[from] CostMapError),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error("invalid episode: {0}")]
    Invalid(String),
    #[error("trajectories do not share a tick grid: {0}")]
    TickGrid(String),
}

/// Who flies an aircraft.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlannerKind {
    Sorts,
    Ablation,
    /// Fixed primitive indices, one per tick; the last one repeats once exhausted.
    Scripted(Vec<usize>),
    /// Actions supplied from outside each tick; the previous one holds when none arrives.
    Human,
}

impl PlannerKind {
    pub fn label(&self) -> &'static str {
        match self {
            PlannerKind::Sorts => "sorts",
            PlannerKind::Ablation => "ablation",
            PlannerKind::Scripted(_) => "scripted",
            PlannerKind::Human => "human",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpisodeConfig {
    pub seed: u64,
    /// One entry per aircraft.
    pub planners: Vec<PlannerKind>,
    /// Entry sectors; drawn from the spec's spawn sectors when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sectors: Option<Vec<Sector>>,
    /// Overrides the planner's minimum separation, km.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub separation_d: Option<f64>,
}

impl EpisodeConfig {
    pub fn uniform(n_agents: usize, kind: PlannerKind, seed: u64) -> Self {
        Self {
            seed,
            planners: vec![kind; n_agents],
            sectors: None,
            separation_d: None,
        }
    }

    pub fn n_agents(&self) -> usize {
        self.planners.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Outcome {
    Success,
    #[serde(rename = "fail-ls")]
    FailLs,
    #[serde(rename = "fail-timeout")]
    FailTimeout,
    #[serde(rename = "fail-offtrack")]
    FailOfftrack,
}

impl Outcome {
    pub const ALL: [Outcome; 4] = [
        Outcome::Success,
        Outcome::FailLs,
        Outcome::FailTimeout,
        Outcome::FailOfftrack,
    ];
}

/// Per-aircraft summary of an episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentRecord {
    pub id: u32,
    pub sector: Sector,
    pub planner: PlannerKind,
    pub outcome: Outcome,
    /// Tick at whose end the aircraft left the episode.
    pub end_tick: u32,
    /// Sub-step state at which the goal was reached.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arrival: Option<AgentState>,
    /// Mean cross-track error over the flown trajectory, km.
    pub reference_error: f64,
}

/// Notable things that happened during a tick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EpisodeEvent {
    LossOfSeparation { tick: u32, agents: [u32; 2], distance: f64 },
    Landed { tick: u32, agent: u32 },
    Offtrack { tick: u32, agent: u32, cross_track: f64 },
    Timeout { tick: u32, agent: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub version: String,
    pub spec: ExperimentSpec,
    pub config: EpisodeConfig,
    pub ticks: u32,
    pub agents: Vec<AgentRecord>,
    /// Seconds below minimum separation for every pair; symmetric, zero diagonal.
    pub loss_of_separation: Vec<Vec<f64>>,
    pub paths: Vec<ReferencePath>,
    pub trajectories: Vec<Trajectory>,
    /// Primitive index flown at each tick, per aircraft.
    pub actions: Vec<Vec<usize>>,
    pub decisions: Vec<Decision>,
    pub events: Vec<EpisodeEvent>,
}

impl EpisodeResult {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("episode result serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, ConfigError> {
        let r: EpisodeResult = serde_json::from_str(s)?;
        if r.version != RESULT_VERSION {
            return Err(ConfigError::Schema(format!(
                "unsupported episode version {:?}, expected {RESULT_VERSION:?}",
                r.version
            )));
        }
        Ok(r)
    }

    pub fn count(&self, outcome: Outcome) -> usize {
        self.agents.iter().filter(|a| a.outcome == outcome).count()
    }
}

/// Shared, immutable per-spec resources: path library, cost map and predictor.
pub struct Runtime {
    pub spec: ExperimentSpec,
    pub library: Vec<Arc<ReferencePath>>,
    pub costmap: CostMap,
    pub predictor: Arc<dyn SocialPredictor>,
}

impl Runtime {
    pub fn new(spec: ExperimentSpec) -> Result<Self, EpisodeError> {
        spec.validate()?;
        let library = build_pattern_library(&spec.airport.runway, &spec.airport.pattern);
        let costmap = build_costmap(&library, &spec.costmap)?;
        let predictor = build_predictor(&spec.predictor.name, &spec.predictor.params, &spec.reference)?;
        Ok(Self {
            library: library.into_iter().map(Arc::new).collect(),
            costmap,
            predictor,
            spec,
        })
    }

    fn path_for(&self, sector: Sector) -> &Arc<ReferencePath> {
        self.library
            .iter()
            .find(|p| p.entry_label() == sector)
            .expect("library covers every sector")
    }
}

fn mix(seed: u64, tick: u32, agent: u32) -> u64 {
    // splitmix64 finalizer over the packed inputs
    let mut z = seed ^ (u64::from(tick) << 32 | u64::from(agent)).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone)]
struct LiveAgent {
    id: u32,
    sector: Sector,
    planner: PlannerKind,
    path: Arc<ReferencePath>,
    goal: AgentState,
    traj: Trajectory,
    actions: Vec<usize>,
    outcome: Option<(Outcome, u32)>,
    arrival: Option<AgentState>,
}

/// Callback receiving every finished search tree with the decision taken from it.
pub type TreeInspector<'i> = dyn Fn(&SearchTree<'_>, &Decision) + Sync + 'i;

/// Everything produced by one call to [`Episode::step`].
#[derive(Debug, Clone, Default)]
pub struct TickReport {
    pub tick: u32,
    pub decisions: Vec<Decision>,
    pub events: Vec<EpisodeEvent>,
}

/// Steppable episode engine: every tick all aircraft plan on the same snapshot and move together.
pub struct Episode {
    runtime: Arc<Runtime>,
    config: EpisodeConfig,
    planner: PlannerConfig,
    agents: Vec<LiveAgent>,
    tick: u32,
    decisions: Vec<Decision>,
    events: Vec<EpisodeEvent>,
}

impl Episode {
    pub fn new(runtime: Arc<Runtime>, config: EpisodeConfig) -> Result<Self, EpisodeError> {
        let spec = &runtime.spec;
        let n = config.n_agents();
        if n == 0 || n > crate::config::MAX_AGENTS {
            return Err(EpisodeError::Invalid(format!("{n} agents is outside 1..=5")));
        }
        for kind in &config.planners {
            if let PlannerKind::Scripted(seq) = kind {
                if seq.is_empty() || seq.iter().any(|&a| a >= NUM_PRIMITIVES) {
                    return Err(EpisodeError::Invalid("scripted sequence must be non-empty primitive indices".into()));
                }
            }
        }
        let mut planner = spec.planner;
        if let Some(d) = config.separation_d {
            if !(d > 0.0) {
                return Err(EpisodeError::Invalid("separation_d must be positive".into()));
            }
            planner.separation_d = d;
        }

        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let sectors = match &config.sectors {
            Some(s) => {
                if s.len() != n || s.iter().enumerate().any(|(i, x)| s[..i].contains(x)) {
                    return Err(EpisodeError::Invalid("need one distinct sector per agent".into()));
                }
                s.clone()
            }
            None => {
                if n > spec.spawn.sectors.len() {
                    return Err(EpisodeError::Invalid("more agents than spawn sectors".into()));
                }
                let mut pool = spec.spawn.sectors.clone();
                pool.shuffle(&mut rng);
                pool.truncate(n);
                pool
            }
        };
        let runway = &spec.airport.runway;
        let radius = spec.airport.pattern.spawn_radius;
        let jitter = spec.spawn.bearing_jitter_deg.to_radians();
        let goal = runway.goal_state();
        let mut agents = Vec::with_capacity(n);
        for (i, (&sector, kind)) in sectors.iter().zip(&config.planners).enumerate() {
            let offset = if jitter > 0.0 { rng.random_range(-jitter..=jitter) } else { 0.0 };
            let bearing = sector.bearing() + offset;
            let start = [
                runway.x + radius * bearing.cos(),
                runway.y + radius * bearing.sin(),
                spec.airport.pattern.pattern_altitude,
            ];
            let path = Arc::new(runtime.path_for(sector).with_start(start)?);
            let next = path.waypoints()[1];
            let heading = (next[1] - start[1]).atan2(next[0] - start[0]);
            let state = AgentState::new(start[0], start[1], start[2], heading, spec.spawn.airspeed);
            agents.push(LiveAgent {
                id: i as u32,
                sector,
                planner: kind.clone(),
                path,
                goal,
                traj: Trajectory::start(0, state),
                actions: Vec::new(),
                outcome: None,
                arrival: None,
            });
        }
        Ok(Self {
            runtime,
            config,
            planner,
            agents,
            tick: 0,
            decisions: Vec::new(),
            events: Vec::new(),
        })
    }

    pub fn tick(&self) -> u32 {
        self.tick
    }

    pub fn is_done(&self) -> bool {
        self.agents.iter().all(|a| a.outcome.is_some())
    }

    pub fn config(&self) -> &EpisodeConfig {
        &self.config
    }

    pub fn planner_config(&self) -> &PlannerConfig {
        &self.planner
    }

    pub fn runtime(&self) -> &Arc<Runtime> {
        &self.runtime
    }

    /// Ids of aircraft still flying.
    pub fn active(&self) -> Vec<u32> {
        self.agents.iter().filter(|a| a.outcome.is_none()).map(|a| a.id).collect()
    }

    pub fn state_of(&self, id: u32) -> Option<&AgentState> {
        self.agents.get(id as usize).and_then(|a| a.traj.last())
    }

    pub fn path_of(&self, id: u32) -> Option<&ReferencePath> {
        self.agents.get(id as usize).map(|a| a.path.as_ref())
    }

    pub fn planner_of(&self, id: u32) -> Option<&PlannerKind> {
        self.agents.get(id as usize).map(|a| &a.planner)
    }

    pub fn last_action(&self, id: u32) -> Option<usize> {
        self.agents.get(id as usize).and_then(|a| a.actions.last().copied())
    }

    /// World as every planner sees it at the current tick.
    pub fn snapshot(&self) -> WorldSnapshot {
        WorldSnapshot {
            tick: self.tick,
            agents: self
                .agents
                .iter()
                .filter(|a| a.outcome.is_none())
                .map(|a| AgentView {
                    id: a.id,
                    history: a.traj.window(DEFAULT_HISTORY).to_vec(),
                    path: a.path.clone(),
                    goal: a.goal,
                })
                .collect(),
        }
    }

    fn decide(
        &self,
        agent: &LiveAgent,
        world: &WorldSnapshot,
        external: &BTreeMap<u32, usize>,
        deadline: Option<Instant>,
        inspector: Option<&TreeInspector<'_>>,
    ) -> Result<Decision, EpisodeError> {
        let rt = &self.runtime;
        let seed = mix(self.config.seed, self.tick, agent.id);
        let fixed = |planner: &str, action: usize| Decision {
            tick: self.tick,
            agent: agent.id,
            planner: planner.into(),
            action,
            forced: false,
            partner: None,
            root: Vec::new(),
            overrun: false,
        };
        Ok(match &agent.planner {
            PlannerKind::Sorts => {
                let ctx = PlanningContext {
                    predictor: rt.predictor.as_ref(),
                    costmap: &rt.costmap,
                    reference: &rt.spec.reference,
                    config: &self.planner,
                };
                let (tree, mut d) = search(agent.id, world, ctx, seed, deadline)?;
                if let Some(f) = inspector {
                    f(&tree, &d);
                }
                if d.overrun && d.forced {
                    // out of time with nothing safe found: hold the previous command
                    if let Some(&prev) = agent.actions.last() {
                        d.action = prev;
                    }
                }
                d
            }
            PlannerKind::Ablation => ablation_plan(
                agent.id,
                world,
                rt.predictor.as_ref(),
                &rt.spec.reference,
                rt.spec.ablation_lambda,
                seed,
            )?,
            PlannerKind::Scripted(seq) => {
                let i = (self.tick as usize).min(seq.len() - 1);
                fixed("scripted", seq[i])
            }
            PlannerKind::Human => {
                let action = external
                    .get(&agent.id)
                    .copied()
                    .or_else(|| agent.actions.last().copied())
                    .unwrap_or_else(cruise_straight);
                if action >= NUM_PRIMITIVES {
                    return Err(EpisodeError::Invalid(format!("action {action} out of range")));
                }
                fixed("human", action)
            }
        })
    }

    /// Plans every flying aircraft on the current snapshot, moves them together and applies the
    /// termination rules. `external` supplies actions for human-flown aircraft.
    pub fn step(&mut self, external: &BTreeMap<u32, usize>) -> Result<TickReport, EpisodeError> {
        self.step_with_deadline(external, None)
    }

    pub fn step_with_deadline(
        &mut self,
        external: &BTreeMap<u32, usize>,
        deadline: Option<Instant>,
    ) -> Result<TickReport, EpisodeError> {
        self.step_inspected(external, deadline, None)
    }

    /// As [`Episode::step_with_deadline`], handing every search tree to `inspector`.
    pub fn step_inspected(
        &mut self,
        external: &BTreeMap<u32, usize>,
        deadline: Option<Instant>,
        inspector: Option<&TreeInspector<'_>>,
    ) -> Result<TickReport, EpisodeError> {
        if self.is_done() {
            return Ok(TickReport { tick: self.tick, ..TickReport::default() });
        }
        let world = self.snapshot();
        let flying: Vec<usize> = (0..self.agents.len())
            .filter(|&i| self.agents[i].outcome.is_none())
            .collect();
        let decisions: Vec<Decision> = flying
            .par_iter()
            .map(|&i| self.decide(&self.agents[i], &world, external, deadline, inspector))
            .collect::<Result<_, _>>()?;

        let tick = self.tick;
        let d = self.planner.separation_d;
        let mut paths: Vec<Vec<AgentState>> = Vec::with_capacity(flying.len());
        for (&i, dec) in flying.iter().zip(&decisions) {
            let a = &self.agents[i];
            paths.push(intermediate_states(a.traj.last().unwrap(), &primitive(dec.action)));
        }
        for ((&i, dec), sub) in flying.iter().zip(&decisions).zip(&paths) {
            let a = &mut self.agents[i];
            a.traj.push(primitive(dec.action), *sub.last().unwrap());
            a.actions.push(dec.action);
        }

        let mut events = Vec::new();
        let mut lost = vec![false; flying.len()];
        for x in 0..flying.len() {
            for y in x + 1..flying.len() {
                let closest = (0..SUBSTEPS)
                    .map(|k| separation(&paths[x][k], &paths[y][k]))
                    .fold(f64::INFINITY, f64::min);
                if closest < d {
                    lost[x] = true;
                    lost[y] = true;
                    events.push(EpisodeEvent::LossOfSeparation {
                        tick,
                        agents: [self.agents[flying[x]].id, self.agents[flying[y]].id],
                        distance: closest,
                    });
                }
            }
        }
        let goal_radius = self.planner.goal_radius;
        let offtrack = self.runtime.spec.offtrack_limit;
        for (slot, &i) in flying.iter().enumerate() {
            let a = &mut self.agents[i];
            if lost[slot] {
                a.outcome = Some((Outcome::FailLs, tick));
                continue;
            }
            let g = a.goal.position();
            if let Some(s) = paths[slot].iter().find(|s| distance(&s.position(), &g) <= goal_radius) {
                a.outcome = Some((Outcome::Success, tick));
                a.arrival = Some(*s);
                events.push(EpisodeEvent::Landed { tick, agent: a.id });
                continue;
            }
            let xte = cross_track_error(a.traj.last().unwrap(), &a.path);
            if xte > offtrack {
                a.outcome = Some((Outcome::FailOfftrack, tick));
                events.push(EpisodeEvent::Offtrack { tick, agent: a.id, cross_track: xte });
            }
        }
        self.tick += 1;
        if self.tick >= self.planner.max_episode_steps {
            for a in self.agents.iter_mut().filter(|a| a.outcome.is_none()) {
                a.outcome = Some((Outcome::FailTimeout, tick));
                events.push(EpisodeEvent::Timeout { tick, agent: a.id });
            }
        }
        for d in decisions.iter().filter(|d| d.forced) {
            log::debug!("tick {tick}: agent {} forced to action {}", d.agent, d.action);
        }
        for e in &events {
            log::debug!("tick {tick}: {e:?}");
        }
        self.decisions.extend(decisions.iter().cloned());
        self.events.extend(events.iter().cloned());
        Ok(TickReport { tick, decisions, events })
    }

    /// Finished episode record; aircraft still flying are reported as timed out.
    pub fn finish(self) -> Result<EpisodeResult, EpisodeError> {
        let last = self.tick.saturating_sub(1);
        let trajectories: Vec<Trajectory> = self.agents.iter().map(|a| a.traj.clone()).collect();
        let n = trajectories.len();
        let d = self.planner.separation_d;
        let mut ls = vec![vec![0.0; n]; n];
        for x in 0..n {
            for y in x + 1..n {
                let v = loss_of_separation(&trajectories[x], &trajectories[y], d)?;
                ls[x][y] = v;
                ls[y][x] = v;
            }
        }
        let agents = self
            .agents
            .iter()
            .map(|a| {
                let (outcome, end_tick) = a.outcome.unwrap_or((Outcome::FailTimeout, last));
                AgentRecord {
                    id: a.id,
                    sector: a.sector,
                    planner: a.planner.clone(),
                    outcome,
                    end_tick,
                    arrival: a.arrival,
                    reference_error: reference_error(&a.traj, &a.path),
                }
            })
            .collect();
        Ok(EpisodeResult {
            version: RESULT_VERSION.into(),
            spec: self.runtime.spec.clone(),
            config: self.config,
            ticks: self.tick,
            agents,
            loss_of_separation: ls,
            paths: self.agents.iter().map(|a| a.path.as_ref().clone()).collect(),
            trajectories,
            actions: self.agents.iter().map(|a| a.actions.clone()).collect(),
            decisions: self.decisions,
            events: self.events,
        })
    }
}

/// Cruise-speed, level, straight primitive.
pub fn cruise_straight() -> usize {
    crate::airspace::PrimitiveIndex {
        airspeed: 2,
        vertical_rate: 3,
        heading_change: 3,
    }
    .flat()
}

/// Runs an episode to completion. Human-flown aircraft replay `human_actions[id]` tick by tick.
pub fn run_episode_with_inputs(
    runtime: Arc<Runtime>,
    config: EpisodeConfig,
    human_actions: &BTreeMap<u32, Vec<usize>>,
) -> Result<EpisodeResult, EpisodeError> {
    let mut ep = Episode::new(runtime, config)?;
    while !ep.is_done() {
        let t = ep.tick() as usize;
        let inputs: BTreeMap<u32, usize> = human_actions
            .iter()
            .filter_map(|(&id, seq)| seq.get(t).map(|&a| (id, a)))
            .collect();
        ep.step(&inputs)?;
    }
    ep.finish()
}

pub fn run_episode(runtime: Arc<Runtime>, config: EpisodeConfig) -> Result<EpisodeResult, EpisodeError> {
    run_episode_with_inputs(runtime, config, &BTreeMap::new())
}

/// Re-simulates a logged episode from its embedded spec and configuration.
pub fn replay(logged: &EpisodeResult) -> Result<EpisodeResult, EpisodeError> {
    let runtime = Arc::new(Runtime::new(logged.spec.clone())?);
    let humans: BTreeMap<u32, Vec<usize>> = logged
        .config
        .planners
        .iter()
        .enumerate()
        .filter(|(_, k)| **k == PlannerKind::Human)
        .map(|(i, _)| (i as u32, logged.actions.get(i).cloned().unwrap_or_default()))
        .collect();
    run_episode_with_inputs(runtime, logged.config.clone(), &humans)
}

/// First tick at which two episode records disagree, or `None` when they are bit-identical.
pub fn first_divergence(logged: &EpisodeResult, fresh: &EpisodeResult) -> Option<u32> {
    let n = logged.trajectories.len().max(fresh.trajectories.len());
    let mut first: Option<u32> = None;
    for i in 0..n {
        let (Some(a), Some(b)) = (logged.trajectories.get(i), fresh.trajectories.get(i)) else {
            return Some(0);
        };
        let len = a.states.len().max(b.states.len());
        let diverged = (0..len).find(|&k| match (a.states.get(k), b.states.get(k)) {
            (Some(x), Some(y)) => state_bits(x) != state_bits(y),
            _ => true,
        });
        if let Some(k) = diverged {
            let k = k as u32;
            first = Some(first.map_or(k, |f| f.min(k)));
        }
    }
    if first.is_none() && logged != fresh {
        let tick = logged
            .decisions
            .iter()
            .zip(&fresh.decisions)
            .find(|(a, b)| a != b)
            .map_or(logged.ticks.min(fresh.ticks), |(a, _)| a.tick);
        first = Some(tick);
    }
    first
}

fn state_bits(s: &AgentState) -> [u64; 5] {
    [s.x, s.y, s.z, s.heading, s.airspeed].map(f64::to_bits)
}

/// Mean cross-track error over the tick states of `executed`, km.
pub fn reference_error(executed: &Trajectory, path: &ReferencePath) -> f64 {
    if executed.is_empty() {
        return 0.0;
    }
    let total: f64 = executed.states.iter().map(|s| cross_track_error(s, path)).sum();
    total / executed.len() as f64
}

/// Seconds during which the two aircraft are closer than `d`, counted per 1 s sub-step over the
/// intervals both trajectories cover.
pub fn loss_of_separation(a: &Trajectory, b: &Trajectory, d: f64) -> Result<f64, EpisodeError> {
    let (Some(&ta), Some(&tb)) = (a.ticks.first(), b.ticks.first()) else {
        return Err(EpisodeError::TickGrid("empty trajectory".into()));
    };
    if ta != tb || !a.is_well_formed() || !b.is_well_formed() {
        return Err(EpisodeError::TickGrid(format!("first ticks {ta} and {tb}")));
    }
    let intervals = a.primitives.len().min(b.primitives.len());
    let mut seconds = 0.0;
    for i in 0..intervals {
        let (sa, sb) = (a.substeps(i), b.substeps(i));
        seconds += sa
            .iter()
            .zip(&sb)
            .filter(|(x, y)| separation(x, y) < d)
            .count() as f64
            * crate::airspace::SUBSTEP;
    }
    Ok(seconds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::airspace::{MotionPrimitive, PrimitiveIndex};
    use crate::config::load_bundled;
    use std::sync::OnceLock;

    fn runtime() -> Arc<Runtime> {
        static RT: OnceLock<Arc<Runtime>> = OnceLock::new();
        RT.get_or_init(|| {
            let mut spec = load_bundled("smoke.json").unwrap();
            spec.costmap.samples_per_path = 100;
            Arc::new(Runtime::new(spec).unwrap())
        })
        .clone()
    }

    fn hover_at(x: f64, y: f64, ticks: usize) -> Trajectory {
        let mut t = Trajectory::start(0, AgentState::new(x, y, 0.3, 0.0, 0.0));
        let p = MotionPrimitive::new(0.0, 0.0, 0.0);
        for _ in 0..ticks {
            t.advance(p);
        }
        t
    }

    fn straight(y: f64, ticks: usize) -> Trajectory {
        let mut t = Trajectory::start(0, AgentState::new(0.0, y, 0.3, 0.0, 0.04));
        for _ in 0..ticks {
            t.advance(primitive(cruise_straight()));
        }
        t
    }

    #[test]
    fn loss_of_separation_examples() {
        assert_eq!(loss_of_separation(&straight(0.0, 5), &straight(1.0, 5), 0.2).unwrap(), 0.0);
        let (a, b) = (hover_at(0.0, 0.0, 5), hover_at(0.1, 0.0, 5));
        assert_eq!(loss_of_separation(&a, &b, 0.2).unwrap(), 100.0);
        assert_eq!(loss_of_separation(&b, &a, 0.2).unwrap(), 100.0);
        let mut late = hover_at(0.1, 0.0, 5);
        late.ticks.iter_mut().for_each(|t| *t += 1);
        assert!(matches!(loss_of_separation(&a, &late, 0.2), Err(EpisodeError::TickGrid(_))));
    }

    #[test]
    fn reference_error_examples() {
        let path = ReferencePath::new(vec![[-10.0, 0.0, 0.3], [40.0, 0.0, 0.3]], Sector::W).unwrap();
        assert!(reference_error(&straight(0.0, 6), &path) < 1e-12);
        assert!((reference_error(&straight(1.0, 6), &path) - 1.0).abs() < 1e-12);
        let mut half = straight(0.0, 1);
        half.states.push(AgentState::new(3.0, 1.0, 0.3, 0.0, 0.04));
        half.states.push(AgentState::new(4.0, 1.0, 0.3, 0.0, 0.04));
        assert!((reference_error(&half, &path) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn spawn_geometry() {
        let rt = runtime();
        let ep = Episode::new(rt.clone(), EpisodeConfig::uniform(4, PlannerKind::Sorts, 11)).unwrap();
        let mut seen = Vec::new();
        for a in &ep.agents {
            let s = a.traj.last().unwrap();
            assert!((s.x.hypot(s.y) - 10.0).abs() < 1e-9);
            assert_eq!(s.z, 0.3);
            assert!(!seen.contains(&a.sector));
            seen.push(a.sector);
            assert_eq!(a.path.waypoints()[0], s.position());
        }
        let fixed = EpisodeConfig {
            sectors: Some(vec![Sector::N, Sector::S]),
            ..EpisodeConfig::uniform(2, PlannerKind::Sorts, 1)
        };
        let ep = Episode::new(rt.clone(), fixed).unwrap();
        assert_eq!(ep.agents[0].sector, Sector::N);
        let dup = EpisodeConfig {
            sectors: Some(vec![Sector::N, Sector::N]),
            ..EpisodeConfig::uniform(2, PlannerKind::Sorts, 1)
        };
        assert!(Episode::new(rt, dup).is_err());
    }

    #[test]
    fn single_agent_lands() {
        let r = run_episode(runtime(), EpisodeConfig::uniform(1, PlannerKind::Sorts, 3)).unwrap();
        assert_eq!(r.agents[0].outcome, Outcome::Success, "{:?}", r.events);
        let arrival = r.agents[0].arrival.unwrap();
        let goal = r.spec.airport.runway.goal_state();
        assert!(separation(&arrival, &goal) <= 0.2);
        assert!(r.ticks < 100);
    }

    #[test]
    fn head_on_scripted_collision() {
        let rt = runtime();
        // W and E entries face each other across the field
        let cfg = EpisodeConfig {
            seed: 5,
            planners: vec![PlannerKind::Scripted(vec![cruise_straight()]); 2],
            sectors: Some(vec![Sector::W, Sector::E]),
            separation_d: None,
        };
        let mut spec = rt.spec.clone();
        spec.spawn.bearing_jitter_deg = 0.0;
        let rt = Arc::new(Runtime {
            spec,
            library: rt.library.clone(),
            costmap: rt.costmap.clone(),
            predictor: rt.predictor.clone(),
        });
        let mut ep = Episode::new(rt, cfg).unwrap();
        // aim both at the origin
        for a in &mut ep.agents {
            let s = *a.traj.last().unwrap();
            a.traj = Trajectory::start(0, AgentState { heading: (-s.y).atan2(-s.x), ..s });
        }
        while !ep.is_done() {
            ep.step(&BTreeMap::new()).unwrap();
        }
        let r = ep.finish().unwrap();
        assert_eq!(r.count(Outcome::FailLs), 2);
        assert!(r.loss_of_separation[0][1] > 0.0);
        assert_eq!(r.loss_of_separation[0][1], r.loss_of_separation[1][0]);
        assert!(r.ticks < 100);
        assert_eq!(r.agents[0].end_tick, r.ticks - 1);
    }

    #[test]
    fn human_hold_semantics() {
        let rt = runtime();
        let mut ep = Episode::new(rt, EpisodeConfig::uniform(1, PlannerKind::Human, 2)).unwrap();
        let left = PrimitiveIndex { airspeed: 2, vertical_rate: 3, heading_change: 2 }.flat();
        ep.step(&BTreeMap::from([(0, left)])).unwrap();
        for _ in 0..3 {
            ep.step(&BTreeMap::new()).unwrap();
        }
        assert_eq!(ep.agents[0].actions, vec![left; 4]);
    }

    #[test]
    fn deterministic_and_replayable() {
        let rt = runtime();
        let cfg = EpisodeConfig::uniform(3, PlannerKind::Sorts, 21);
        let a = run_episode(rt.clone(), cfg.clone()).unwrap();
        let b = run_episode(rt, cfg).unwrap();
        assert_eq!(a.to_json(), b.to_json());
        let parsed = EpisodeResult::from_json(&a.to_json()).unwrap();
        assert_eq!(parsed, a);
        let again = replay(&parsed).unwrap();
        assert_eq!(first_divergence(&parsed, &again), None);
        let mut tampered = parsed.clone();
        tampered.trajectories[1].states[4].x += 1e-9;
        assert_eq!(first_divergence(&tampered, &again), Some(4));
    }

    #[test]
    fn outcome_bookkeeping() {
        let rt = runtime();
        for seed in 0..3 {
            let r = run_episode(rt.clone(), EpisodeConfig::uniform(3, PlannerKind::Ablation, seed)).unwrap();
            let total: usize = Outcome::ALL.iter().map(|o| r.count(*o)).sum();
            assert_eq!(total, 3);
            for (i, a) in r.agents.iter().enumerate() {
                assert!(r.trajectories[i].is_well_formed());
                assert_eq!(r.trajectories[i].len() as u32, a.end_tick + 2);
                if a.outcome == Outcome::FailLs {
                    assert!((0..3).any(|j| r.loss_of_separation[i][j] > 0.0));
                }
            }
            assert!(r.ticks <= 100);
        }
    }
}
