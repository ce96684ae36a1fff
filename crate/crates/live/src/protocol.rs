//! WebSocket message schema, version "v1". Every message is a JSON object tagged by `type`.

use serde::{Deserialize, Serialize};
use sorts_core::planner::Decision;
use sorts_core::selfplay::{EpisodeEvent, EpisodeResult};
use sorts_core::Sector;

use crate::quantize::Control;

pub const PROTOCOL_VERSION: &str = "v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OpponentKind {
    Sorts,
    Ablation,
    Scripted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ClientMessage {
    Start {
        sector: Sector,
        opponent: OpponentKind,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        opponent_sector: Option<Sector>,
    },
    Control {
        tick: u32,
        #[serde(flatten)]
        control: Control,
    },
    Pause,
    Resume,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentWire {
    pub id: u32,
    pub role: String,
    pub active: bool,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub heading: f64,
    pub airspeed: f64,
}

/// Compact view of one planner decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionSummary {
    pub agent: u32,
    pub planner: String,
    pub action: usize,
    pub forced: bool,
    pub overrun: bool,
    /// Root actions removed for violating separation.
    pub pruned: Vec<usize>,
}

impl From<&Decision> for DecisionSummary {
    fn from(d: &Decision) -> Self {
        Self {
            agent: d.agent,
            planner: d.planner.clone(),
            action: d.action,
            forced: d.forced,
            overrun: d.overrun,
            pruned: d.root.iter().filter(|c| c.pruned).map(|c| c.action).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ServerMessage {
    Started {
        version: String,
        session: String,
        human: u32,
        sectors: Vec<Sector>,
    },
    Snapshot {
        version: String,
        tick: u32,
        agents: Vec<AgentWire>,
        events: Vec<EpisodeEvent>,
        decision_summary: Vec<DecisionSummary>,
    },
    Ack {
        /// Tick at whose boundary the control takes effect.
        tick: u32,
        primitive: usize,
        #[serde(flatten)]
        control: Control,
    },
    Result {
        result: Box<EpisodeResult>,
    },
    Paused {
        tick: u32,
    },
    Resumed {
        tick: u32,
    },
    Error {
        message: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        current_tick: Option<u32>,
    },
}

impl ServerMessage {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("server message serializes")
    }
}
