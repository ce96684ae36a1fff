//! Socially-aware tree search for landing several aircraft at a non-towered airfield.
//!
//! Units: kilometres, seconds, radians (heading counter-clockwise from +x, east).

pub mod airspace;
pub mod config;
pub mod costmap;
pub mod error;
pub mod planner;
pub mod reference;
pub mod selfplay;
pub mod social;
pub mod trajectory;

pub use airspace::{ActionDistribution, AgentState, MotionPrimitive, NUM_PRIMITIVES};
pub use config::ExperimentSpec;
pub use costmap::CostMap;
pub use error::ConfigError;
pub use planner::{plan, Decision, PlannerConfig, PlanningContext, WorldSnapshot};
pub use reference::{ReferencePath, RunwayPose, Sector};
pub use selfplay::{run_episode, EpisodeConfig, EpisodeResult, Outcome, PlannerKind, Runtime};
pub use social::SocialPredictor;
pub use trajectory::Trajectory;
