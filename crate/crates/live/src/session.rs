//! One human pilot against one planner-flown aircraft, advanced a tick at a time.
//!
//! Everything here is synchronous and network-free; the server drives it from a tick loop.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Instant;

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use sorts_core::airspace::{distance, intermediate_states, primitive, step_dynamics};
use sorts_core::reference::reference_prior;
use sorts_core::selfplay::{Episode, EpisodeError, EpisodeResult, TickReport};
use sorts_core::{EpisodeConfig, PlannerKind, Runtime, Sector};

use crate::protocol::{AgentWire, DecisionSummary, OpponentKind, ServerMessage, PROTOCOL_VERSION};
use crate::quantize::{quantize, Control};

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("sector {0} is not offered; choose one of {1}")]
    BadSector(Sector, String),
    #[error("human and opponent sectors must differ")]
    DuplicateSector,
    #[error("control for tick {requested} is stale; current tick is {current}")]
    StaleTick { requested: u32, current: u32 },
    #[error("control values must be finite")]
    BadControl,
    #[error("session has finished")]
    Finished,
    #[error(transparent)]
    Episode(#[from] EpisodeError),
}

impl SessionError {
    pub fn to_message(&self) -> ServerMessage {
        let current_tick = match self {
            SessionError::StaleTick { current, .. } => Some(*current),
            _ => None,
        };
        ServerMessage::Error {
            message: self.to_string(),
            current_tick,
        }
    }
}

pub const HUMAN: u32 = 0;
pub const OPPONENT: u32 = 1;

/// Primitive sequence that greedily follows the reference from the opponent's spawn point.
fn reference_tracking_sequence(episode: &Episode, id: u32) -> Vec<usize> {
    let rt = episode.runtime();
    let path = episode.path_of(id).expect("opponent exists");
    let goal = rt.spec.airport.runway.goal_state().position();
    let radius = episode.planner_config().goal_radius;
    let mut state = *episode.state_of(id).expect("opponent exists");
    let mut seq = Vec::new();
    for _ in 0..episode.planner_config().max_episode_steps {
        let a = reference_prior(&state, path, &rt.spec.reference).argmax();
        seq.push(a);
        let prim = primitive(a);
        if intermediate_states(&state, &prim)
            .iter()
            .any(|s| distance(&s.position(), &goal) <= radius)
        {
            break;
        }
        state = step_dynamics(&state, &prim);
    }
    seq
}

pub struct Session {
    pub id: String,
    episode: Option<Episode>,
    result: Option<EpisodeResult>,
    sectors: Vec<Sector>,
    pending: Option<usize>,
    log: Vec<String>,
}

impl Session {
    /// Spawns the human in `sector` and the opponent in `opponent_sector`, or in a seeded
    /// random other sector offered by the spec.
    pub fn start(
        runtime: Arc<Runtime>,
        id: String,
        sector: Sector,
        opponent: OpponentKind,
        opponent_sector: Option<Sector>,
    ) -> Result<Self, SessionError> {
        let live = runtime.spec.live.clone();
        let offered = || {
            live.sectors
                .iter()
                .map(|s| s.label())
                .collect::<Vec<_>>()
                .join(", ")
        };
        if !live.sectors.contains(&sector) {
            return Err(SessionError::BadSector(sector, offered()));
        }
        let other = match opponent_sector {
            Some(s) if s == sector => return Err(SessionError::DuplicateSector),
            Some(s) if !live.sectors.contains(&s) => return Err(SessionError::BadSector(s, offered())),
            Some(s) => s,
            None => {
                let rest: Vec<Sector> = live.sectors.iter().copied().filter(|s| *s != sector).collect();
                let mut rng = ChaCha8Rng::seed_from_u64(live.seed);
                *rest.choose(&mut rng).expect("at least two sectors offered")
            }
        };
        let kind = match opponent {
            OpponentKind::Sorts => PlannerKind::Sorts,
            OpponentKind::Ablation => PlannerKind::Ablation,
            OpponentKind::Scripted => PlannerKind::Scripted(vec![0]),
        };
        let mut config = EpisodeConfig {
            seed: live.seed,
            planners: vec![PlannerKind::Human, kind],
            sectors: Some(vec![sector, other]),
            separation_d: Some(live.separation_d),
        };
        let mut episode = Episode::new(runtime.clone(), config.clone())?;
        if opponent == OpponentKind::Scripted {
            config.planners[1] = PlannerKind::Scripted(reference_tracking_sequence(&episode, OPPONENT));
            episode = Episode::new(runtime, config)?;
        }
        Ok(Self {
            id,
            episode: Some(episode),
            result: None,
            sectors: vec![sector, other],
            pending: None,
            log: Vec::new(),
        })
    }

    pub fn tick(&self) -> u32 {
        match (&self.episode, &self.result) {
            (Some(e), _) => e.tick(),
            (None, Some(r)) => r.ticks,
            _ => 0,
        }
    }

    pub fn is_finished(&self) -> bool {
        self.result.is_some()
    }

    pub fn result(&self) -> Option<&EpisodeResult> {
        self.result.as_ref()
    }

    pub fn started_message(&self) -> ServerMessage {
        ServerMessage::Started {
            version: PROTOCOL_VERSION.into(),
            session: self.id.clone(),
            human: HUMAN,
            sectors: self.sectors.clone(),
        }
    }

    /// Queues the human command for the next tick boundary and acknowledges its quantized form.
    pub fn submit_control(&mut self, tick: u32, control: &Control) -> Result<ServerMessage, SessionError> {
        if self.is_finished() {
            return Err(SessionError::Finished);
        }
        let current = self.tick();
        if tick < current {
            return Err(SessionError::StaleTick { requested: tick, current });
        }
        let (index, quantized) = quantize(control).ok_or(SessionError::BadControl)?;
        self.pending = Some(index);
        Ok(ServerMessage::Ack {
            tick: current,
            primitive: index,
            control: quantized,
        })
    }

    /// Snapshot of the current tick.
    pub fn snapshot(&self, report: Option<&TickReport>) -> ServerMessage {
        let (tick, agents) = match (&self.episode, &self.result) {
            (Some(ep), _) => {
                let active = ep.active();
                let agents = (0..self.sectors.len() as u32)
                    .map(|id| wire(id, ep.planner_of(id).unwrap(), active.contains(&id), ep.state_of(id).unwrap()))
                    .collect();
                (ep.tick(), agents)
            }
            (None, Some(r)) => {
                let agents = r
                    .agents
                    .iter()
                    .map(|a| wire(a.id, &a.planner, false, r.trajectories[a.id as usize].last().unwrap()))
                    .collect();
                (r.ticks, agents)
            }
            _ => unreachable!("session holds an episode or a result"),
        };
        ServerMessage::Snapshot {
            version: PROTOCOL_VERSION.into(),
            tick,
            agents,
            events: report.map(|r| r.events.clone()).unwrap_or_default(),
            decision_summary: report
                .map(|r| r.decisions.iter().map(DecisionSummary::from).collect())
                .unwrap_or_default(),
        }
    }

    /// Advances one tick. Returns the new snapshot, followed by the final result when the episode
    /// ends.
    pub fn advance(&mut self, deadline: Option<Instant>) -> Result<Vec<ServerMessage>, SessionError> {
        let Some(ep) = self.episode.as_mut() else {
            return Err(SessionError::Finished);
        };
        let mut inputs = BTreeMap::new();
        if let Some(a) = self.pending.take() {
            inputs.insert(HUMAN, a);
        }
        let report = ep.step_with_deadline(&inputs, deadline)?;
        for d in &report.decisions {
            self.log.push(serde_json::to_string(d).expect("decision serializes"));
        }
        if ep.is_done() {
            let ep = self.episode.take().unwrap();
            self.result = Some(ep.finish()?);
            let snap = self.snapshot(Some(&report));
            let result = ServerMessage::Result {
                result: Box::new(self.result.clone().unwrap()),
            };
            return Ok(vec![snap, result]);
        }
        Ok(vec![self.snapshot(Some(&report))])
    }

    /// Decision records so far, one JSON object per line.
    pub fn log_jsonl(&self) -> String {
        let mut s = String::new();
        for line in &self.log {
            s.push_str(line);
            s.push('\n');
        }
        s
    }
}

fn wire(id: u32, planner: &PlannerKind, active: bool, s: &sorts_core::AgentState) -> AgentWire {
    AgentWire {
        id,
        role: planner.label().into(),
        active,
        x: s.x,
        y: s.y,
        z: s.z,
        heading: s.heading,
        airspeed: s.airspeed,
    }
}
