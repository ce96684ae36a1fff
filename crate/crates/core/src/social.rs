//! Social action prediction: a pluggable predictor interface plus two deterministic
//! reference implementations.
//!
//! A predictor maps the recent joint motion of every aircraft in the scene to one
//! [`ActionDistribution`] per aircraft. The planner consumes these as the social prior. Learned
//! models plug in by implementing [`SocialPredictor`] and registering in [`build_predictor`].

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::airspace::{
    distance, intermediate_states, max_speed_3d, primitive_library, step_dynamics,
    ActionDistribution, AgentState, PRIMITIVE_DURATION, SUBSTEP, SUBSTEPS,
};
use crate::error::ConfigError;
use crate::reference::{reference_log_scores, ReferenceParams, ReferencePath};

#[derive(Debug, Error, PartialEq)]
pub enum SocialError {
    #[error("scene has {agents} agents but {goals} goals and {paths} paths")]
    AgentCountMismatch {
        agents: usize,
        goals: usize,
        paths: usize,
    },
    #[error("agent {0} has an empty history window")]
    EmptyHistory(u32),
    #[error("agent {id} history has {have} states, predictor needs {need}")]
    HistoryTooShort { id: u32, have: usize, need: usize },
    #[error("agent index {0} out of range")]
    NoSuchAgent(usize),
}

/// Recent states of one aircraft, oldest first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentHistory {
    pub id: u32,
    pub states: Vec<AgentState>,
}

impl AgentHistory {
    pub fn latest(&self) -> &AgentState {
        self.states.last().expect("validated non-empty")
    }

    /// Vertical rate over the last interval, zero with a single state.
    pub fn vertical_rate(&self) -> f64 {
        match self.states.len() {
            0 | 1 => 0.0,
            n => (self.states[n - 1].z - self.states[n - 2].z) / PRIMITIVE_DURATION,
        }
    }
}

/// Per-agent history windows ending at a common tick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointHistory {
    pub tick: u32,
    pub agents: Vec<AgentHistory>,
}

/// Default history length carried by the episode engine.
pub const DEFAULT_HISTORY: usize = 5;

impl JointHistory {
    pub fn new(tick: u32, agents: Vec<AgentHistory>) -> Result<Self, SocialError> {
        if let Some(a) = agents.iter().find(|a| a.states.is_empty()) {
            return Err(SocialError::EmptyHistory(a.id));
        }
        Ok(Self { tick, agents })
    }

    pub fn len(&self) -> usize {
        self.agents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.agents.is_empty()
    }
}

/// Everything a predictor may condition on.
#[derive(Debug, Clone, Copy)]
pub struct SocialQuery<'a> {
    pub history: &'a JointHistory,
    pub goals: &'a [AgentState],
    pub paths: &'a [&'a ReferencePath],
    pub seed: u64,
}

impl SocialQuery<'_> {
    pub fn validate(&self, min_history: usize) -> Result<(), SocialError> {
        let n = self.history.len();
        if self.goals.len() != n || self.paths.len() != n {
            return Err(SocialError::AgentCountMismatch {
                agents: n,
                goals: self.goals.len(),
                paths: self.paths.len(),
            });
        }
        for a in &self.history.agents {
            if a.states.is_empty() {
                return Err(SocialError::EmptyHistory(a.id));
            }
            if a.states.len() < min_history {
                return Err(SocialError::HistoryTooShort {
                    id: a.id,
                    have: a.states.len(),
                    need: min_history,
                });
            }
        }
        Ok(())
    }
}

/// Per-agent predicted action distributions and expected successor states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SocialPrediction {
    pub distributions: Vec<ActionDistribution>,
    pub successors: Vec<AgentState>,
}

/// Maps joint motion histories to per-agent action distributions.
///
/// Implementations must be deterministic for a given query (including its seed) and safe to
/// call concurrently.
pub trait SocialPredictor: Send + Sync {
    fn name(&self) -> &str;

    /// Shortest history window this predictor accepts.
    fn min_history(&self) -> usize {
        1
    }

    /// Distribution for a single agent of the scene.
    fn predict_agent(
        &self,
        query: &SocialQuery<'_>,
        agent: usize,
    ) -> Result<ActionDistribution, SocialError>;

    fn predict(&self, query: &SocialQuery<'_>) -> Result<SocialPrediction, SocialError> {
        query.validate(self.min_history())?;
        let mut distributions = Vec::with_capacity(query.history.len());
        let mut successors = Vec::with_capacity(query.history.len());
        for i in 0..query.history.len() {
            let dist = self.predict_agent(query, i)?;
            successors.push(expected_successor(query.history.agents[i].latest(), &dist));
            distributions.push(dist);
        }
        Ok(SocialPrediction {
            distributions,
            successors,
        })
    }
}

/// Probability-weighted end position one primitive ahead; heading from the modal primitive.
pub fn expected_successor(state: &AgentState, dist: &ActionDistribution) -> AgentState {
    let lib = primitive_library();
    let (mut x, mut y, mut z, mut v) = (0.0, 0.0, 0.0, 0.0);
    for (p, prim) in dist.probabilities().iter().zip(lib) {
        if *p == 0.0 {
            continue;
        }
        let s = step_dynamics(state, prim);
        x += p * s.x;
        y += p * s.y;
        z += p * s.z;
        v += p * s.airspeed;
    }
    let modal = step_dynamics(state, &lib[dist.argmax()]);
    AgentState::new(x, y, z, modal.heading, v)
}

/// Parameters of the interaction-aware surrogate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SurrogateParams {
    /// Social comfort distance, km.
    pub d_soc: f64,
    /// Conflict penalty slope, 1/km.
    pub gamma: f64,
    /// Score multiplier on non-decelerating primitives when yielding.
    pub yield_factor: f64,
}

impl Default for SurrogateParams {
    fn default() -> Self {
        Self {
            d_soc: 0.5,
            gamma: 8.0,
            yield_factor: 0.25,
        }
    }
}

/// Reference-seeking, conflict-avoiding, right-of-way-respecting predictor.
///
/// Per agent: reference log-scores, minus a linear penalty for coming within `d_soc` of any
/// other aircraft extrapolated at constant velocity, plus a yield discount when a conflicting
/// aircraft approaches from the right. Softmax-normalized.
#[derive(Debug, Clone, Default)]
pub struct SurrogatePredictor {
    pub params: SurrogateParams,
    pub reference: ReferenceParams,
}

impl SurrogatePredictor {
    pub const NAME: &'static str = "surrogate-v1";

    pub fn new(params: SurrogateParams, reference: ReferenceParams) -> Self {
        Self { params, reference }
    }

    /// Distance beyond which another aircraft cannot influence a prediction.
    pub fn reach(&self) -> f64 {
        2.0 * max_speed_3d() * PRIMITIVE_DURATION + self.params.d_soc
    }
}

fn extrapolate(state: &AgentState, vertical_rate: f64) -> [[f64; 3]; SUBSTEPS] {
    let [vx, vy] = state.velocity_xy();
    let mut out = [[0.0; 3]; SUBSTEPS];
    for (k, p) in out.iter_mut().enumerate() {
        let t = (k + 1) as f64 * SUBSTEP;
        *p = [
            state.x + vx * t,
            state.y + vy * t,
            (state.z + vertical_rate * t).max(0.0),
        ];
    }
    out
}

impl SocialPredictor for SurrogatePredictor {
    fn name(&self) -> &str {
        Self::NAME
    }

    fn predict_agent(
        &self,
        query: &SocialQuery<'_>,
        agent: usize,
    ) -> Result<ActionDistribution, SocialError> {
        let history = query
            .history
            .agents
            .get(agent)
            .ok_or(SocialError::NoSuchAgent(agent))?;
        let path = query.paths.get(agent).ok_or(SocialError::NoSuchAgent(agent))?;
        let own = *history.latest();
        let mut logits = reference_log_scores(&own, path, &self.reference);

        let reach = self.reach();
        let others: Vec<(&AgentHistory, [[f64; 3]; SUBSTEPS])> = query
            .history
            .agents
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != agent)
            .map(|(_, h)| h)
            .filter(|h| distance(&h.latest().position(), &own.position()) <= reach)
            .map(|h| (h, extrapolate(h.latest(), h.vertical_rate())))
            .collect();
        if others.is_empty() {
            return Ok(ActionDistribution::from_log_scores(&logits));
        }

        let d_soc = self.params.d_soc;
        for (logit, prim) in logits.iter_mut().zip(primitive_library()) {
            let subs = intermediate_states(&own, prim);
            let mut closest = f64::INFINITY;
            for (_, track) in &others {
                for (s, q) in subs.iter().zip(track) {
                    closest = closest.min(distance(&s.position(), q));
                }
            }
            *logit -= self.params.gamma * (d_soc - closest).max(0.0);
        }

        let own_track = extrapolate(&own, history.vertical_rate());
        let [ovx, ovy] = own.velocity_xy();
        let (hs, hc) = own.heading.sin_cos();
        let must_yield = others.iter().any(|(h, track)| {
            let miss = own_track
                .iter()
                .zip(track)
                .map(|(a, b)| distance(a, b))
                .fold(f64::INFINITY, f64::min);
            let o = h.latest();
            let (rx, ry) = (o.x - own.x, o.y - own.y);
            let [vx, vy] = o.velocity_xy();
            let on_right = hc * ry - hs * rx < 0.0;
            let closing = rx * (vx - ovx) + ry * (vy - ovy) < 0.0;
            miss < d_soc && on_right && closing
        });
        if must_yield {
            let penalty = self.params.yield_factor.ln();
            for (logit, prim) in logits.iter_mut().zip(primitive_library()) {
                if prim.commanded_airspeed >= own.airspeed {
                    *logit += penalty;
                }
            }
        }
        Ok(ActionDistribution::from_log_scores(&logits))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConstantVelocityParams {
    /// Penalty per km of displacement mismatch over one primitive.
    pub kappa: f64,
}

impl Default for ConstantVelocityParams {
    fn default() -> Self {
        Self { kappa: 4.0 }
    }
}

/// Predicts each aircraft keeps its last observed velocity.
#[derive(Debug, Clone, Default)]
pub struct ConstantVelocityPredictor {
    pub params: ConstantVelocityParams,
}

impl ConstantVelocityPredictor {
    pub const NAME: &'static str = "constant-velocity";
}

impl SocialPredictor for ConstantVelocityPredictor {
    fn name(&self) -> &str {
        Self::NAME
    }

    fn predict_agent(
        &self,
        query: &SocialQuery<'_>,
        agent: usize,
    ) -> Result<ActionDistribution, SocialError> {
        let h = query
            .history
            .agents
            .get(agent)
            .ok_or(SocialError::NoSuchAgent(agent))?;
        let own = *h.latest();
        let observed = match h.states.len() {
            0 | 1 => {
                let [vx, vy] = own.velocity_xy();
                [vx * PRIMITIVE_DURATION, vy * PRIMITIVE_DURATION, 0.0]
            }
            n => {
                let prev = h.states[n - 2];
                [own.x - prev.x, own.y - prev.y, own.z - prev.z]
            }
        };
        let scores: Vec<f64> = primitive_library()
            .iter()
            .map(|p| {
                let end = step_dynamics(&own, p);
                let disp = [end.x - own.x, end.y - own.y, end.z - own.z];
                -self.params.kappa * distance(&disp, &observed)
            })
            .collect();
        Ok(ActionDistribution::from_log_scores(&scores))
    }
}

/// Names accepted by [`build_predictor`].
pub const PREDICTOR_NAMES: [&str; 2] = [SurrogatePredictor::NAME, ConstantVelocityPredictor::NAME];

/// Instantiates a registered predictor from its name and JSON parameter block.
pub fn build_predictor(
    name: &str,
    params: &serde_json::Value,
    reference: &ReferenceParams,
) -> Result<Arc<dyn SocialPredictor>, ConfigError> {
    fn parse<T: serde::de::DeserializeOwned + Default>(v: &serde_json::Value) -> Result<T, ConfigError> {
        if v.is_null() {
            return Ok(T::default());
        }
        serde_json::from_value(v.clone())
            .map_err(|e| ConfigError::Invalid(format!("predictor params: {e}")))
    }
    match name {
        SurrogatePredictor::NAME => Ok(Arc::new(SurrogatePredictor::new(parse(params)?, *reference))),
        ConstantVelocityPredictor::NAME => Ok(Arc::new(ConstantVelocityPredictor {
            params: parse(params)?,
        })),
        other => Err(ConfigError::UnknownPredictor(other.to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::airspace::{primitive, PrimitiveIndex, HEADING_CHANGES_DEG, NUM_PRIMITIVES};
    use crate::reference::{reference_prior, Sector};
    use std::f64::consts::PI;

    fn eastbound() -> ReferencePath {
        ReferencePath::new(vec![[-20.0, 0.0, 0.3], [20.0, 0.0, 0.3]], Sector::W).unwrap()
    }

    fn westbound() -> ReferencePath {
        ReferencePath::new(vec![[20.0, 0.0, 0.3], [-20.0, 0.0, 0.3]], Sector::E).unwrap()
    }

    fn scene(states: &[AgentState]) -> JointHistory {
        JointHistory::new(
            0,
            states
                .iter()
                .enumerate()
                .map(|(i, s)| AgentHistory {
                    id: i as u32,
                    states: vec![*s],
                })
                .collect(),
        )
        .unwrap()
    }

    fn goal() -> AgentState {
        AgentState::new(20.0, 0.0, 0.0, 0.0, 0.03)
    }

    #[test]
    fn single_agent_equals_reference_prior() {
        let s = AgentState::new(0.0, 0.3, 0.3, 0.2, 0.04);
        let path = eastbound();
        let h = scene(&[s]);
        let paths = [&path];
        let q = SocialQuery {
            history: &h,
            goals: &[goal()],
            paths: &paths,
            seed: 1,
        };
        let pred = SurrogatePredictor::default().predict(&q).unwrap();
        let refp = reference_prior(&s, &path, &ReferenceParams::default());
        for (a, b) in pred.distributions[0].probabilities().iter().zip(refp.probabilities()) {
            assert!((a - b).abs() < 1e-9);
        }
        assert_eq!(pred.successors.len(), 1);
    }

    /// Exhaustive brute-force scoring of all primitives with and without the other aircraft.
    fn brute_argmax(own: &AgentState, path: &ReferencePath, other: Option<&AgentState>) -> usize {
        let params = SurrogateParams::default();
        let base = reference_log_scores(own, path, &ReferenceParams::default());
        let mut best = (f64::NEG_INFINITY, 0usize);
        for i in 0..NUM_PRIMITIVES {
            let mut score = base[i];
            if let Some(o) = other {
                let mut closest = f64::INFINITY;
                for k in 1..=20 {
                    let a = intermediate_states(own, &primitive(i))[k - 1];
                    let t = k as f64;
                    let b = [
                        o.x + o.airspeed * o.heading.cos() * t,
                        o.y + o.airspeed * o.heading.sin() * t,
                        o.z,
                    ];
                    closest = closest.min(distance(&a.position(), &b));
                }
                score -= params.gamma * (params.d_soc - closest).max(0.0);
            }
            if score > best.0 {
                best = (score, i);
            }
        }
        best.1
    }

    #[test]
    fn head_on_conflict_changes_both_argmaxes() {
        let a = AgentState::new(-0.8, 0.0, 0.3, 0.0, 0.04);
        let b = AgentState::new(0.8, 0.0, 0.3, PI, 0.04);
        let (pa, pb) = (eastbound(), westbound());
        let h = scene(&[a, b]);
        let paths = [&pa, &pb];
        let goals = [goal(), goal()];
        let q = SocialQuery {
            history: &h,
            goals: &goals,
            paths: &paths,
            seed: 0,
        };
        let pred = SurrogatePredictor::default().predict(&q).unwrap();
        let alone_a = brute_argmax(&a, &pa, None);
        let alone_b = brute_argmax(&b, &pb, None);
        // head-on: neither aircraft is on the other's right, so no yield term
        assert_eq!(pred.distributions[0].argmax(), brute_argmax(&a, &pa, Some(&b)));
        assert_eq!(pred.distributions[1].argmax(), brute_argmax(&b, &pb, Some(&a)));
        assert_ne!(pred.distributions[0].argmax(), alone_a);
        assert_ne!(pred.distributions[1].argmax(), alone_b);
    }

    #[test]
    fn distant_agents_do_not_interact() {
        let a = AgentState::new(-10.0, 0.0, 0.3, 0.0, 0.04);
        let b = AgentState::new(10.0, 0.0, 0.3, PI, 0.04);
        let (pa, pb) = (eastbound(), westbound());
        let h2 = scene(&[a, b]);
        let paths = [&pa, &pb];
        let goals = [goal(), goal()];
        let q = SocialQuery {
            history: &h2,
            goals: &goals,
            paths: &paths,
            seed: 0,
        };
        let pred = SurrogatePredictor::default().predict(&q).unwrap();
        let h1 = scene(&[a]);
        let p1 = [&pa];
        let alone = SurrogatePredictor::default()
            .predict(&SocialQuery {
                history: &h1,
                goals: &goals[..1],
                paths: &p1,
                seed: 0,
            })
            .unwrap();
        assert_eq!(pred.distributions[0], alone.distributions[0]);
    }

    #[test]
    fn yields_to_traffic_from_the_right() {
        // eastbound own ship, crossing traffic from the south heading north
        let own = AgentState::new(0.0, 0.0, 0.3, 0.0, 0.04);
        let other = AgentState::new(0.8, -0.8, 0.3, PI / 2.0, 0.04);
        let path = eastbound();
        let other_path =
            ReferencePath::new(vec![[0.8, -20.0, 0.3], [0.8, 20.0, 0.3]], Sector::S).unwrap();
        let h = scene(&[own, other]);
        let paths = [&path, &other_path];
        let goals = [goal(), goal()];
        let q = SocialQuery {
            history: &h,
            goals: &goals,
            paths: &paths,
            seed: 0,
        };
        let sur = SurrogatePredictor::default();
        let with_yield = sur.predict_agent(&q, 0).unwrap();
        let no_yield = SurrogatePredictor::new(
            SurrogateParams {
                yield_factor: 1.0,
                ..SurrogateParams::default()
            },
            ReferenceParams::default(),
        )
        .predict_agent(&q, 0)
        .unwrap();
        let slow_mass = |d: &ActionDistribution| -> f64 {
            primitive_library()
                .iter()
                .zip(d.probabilities())
                .filter(|(p, _)| p.commanded_airspeed < own.airspeed)
                .map(|(_, w)| w)
                .sum()
        };
        assert!(slow_mass(&with_yield) > slow_mass(&no_yield));
        // the other aircraft sees the own ship on its left and does not yield
        let theirs = sur.predict_agent(&q, 1).unwrap();
        let theirs_no = SurrogatePredictor::new(
            SurrogateParams {
                yield_factor: 1.0,
                ..SurrogateParams::default()
            },
            ReferenceParams::default(),
        )
        .predict_agent(&q, 1)
        .unwrap();
        assert_eq!(theirs, theirs_no);
    }

    #[test]
    fn mismatched_counts_rejected() {
        let h = scene(&[AgentState::new(0.0, 0.0, 0.3, 0.0, 0.04)]);
        let p = eastbound();
        let paths = [&p];
        let q = SocialQuery {
            history: &h,
            goals: &[],
            paths: &paths,
            seed: 0,
        };
        assert!(matches!(
            SurrogatePredictor::default().predict(&q),
            Err(SocialError::AgentCountMismatch { .. })
        ));
        assert!(JointHistory::new(0, vec![AgentHistory { id: 3, states: vec![] }]).is_err());
    }

    #[test]
    fn registry_lookup() {
        let r = ReferenceParams::default();
        let p = build_predictor("surrogate-v1", &serde_json::Value::Null, &r).unwrap();
        assert_eq!(p.name(), "surrogate-v1");
        let c = build_predictor("constant-velocity", &serde_json::json!({"kappa": 2.0}), &r).unwrap();
        assert_eq!(c.name(), "constant-velocity");
        assert!(matches!(
            build_predictor("trajair-net", &serde_json::Value::Null, &r),
            Err(ConfigError::UnknownPredictor(_))
        ));
        assert!(build_predictor("surrogate-v1", &serde_json::json!({"dsoc": 1}), &r).is_err());
    }

    #[test]
    fn constant_velocity_prefers_straight_on_straight_history() {
        let prev = AgentState::new(0.0, 0.0, 0.3, 0.5, 0.045);
        let now = step_dynamics(&prev, &crate::airspace::MotionPrimitive::new(0.045, 0.0, 0.0));
        let h = JointHistory::new(
            1,
            vec![AgentHistory {
                id: 0,
                states: vec![prev, now],
            }],
        )
        .unwrap();
        let path = eastbound();
        let paths = [&path];
        let q = SocialQuery {
            history: &h,
            goals: &[goal()],
            paths: &paths,
            seed: 0,
        };
        let d = ConstantVelocityPredictor::default().predict_agent(&q, 0).unwrap();
        // exhaustive: smallest displacement mismatch
        let observed = [now.x - prev.x, now.y - prev.y, now.z - prev.z];
        let mut best = (f64::INFINITY, 0);
        for i in 0..NUM_PRIMITIVES {
            let e = step_dynamics(&now, &primitive(i));
            let m = distance(&[e.x - now.x, e.y - now.y, e.z - now.z], &observed);
            if m < best.0 {
                best = (m, i);
            }
        }
        assert_eq!(d.argmax(), best.1);
        let idx = PrimitiveIndex::from_flat(d.argmax());
        assert_eq!(HEADING_CHANGES_DEG[idx.heading_change], 0.0);
        assert_eq!(primitive(d.argmax()).commanded_airspeed, 0.045);
        assert_eq!(primitive(d.argmax()).vertical_rate, 0.0);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn any_state() -> impl Strategy<Value = AgentState> {
            (-3.0..3.0f64, -3.0..3.0f64, 0.1..0.5f64, 0.0..6.28f64, 0.03..0.055f64)
                .prop_map(|(x, y, z, h, v)| AgentState::new(x, y, z, h, v))
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(32))]

            #[test]
            fn permutation_equivariant(states in proptest::collection::vec(any_state(), 2..5), rot in 1usize..4) {
                let path = eastbound();
                let n = states.len();
                let h = scene(&states);
                let paths = vec![&path; n];
                let goals = vec![goal(); n];
                let sur = SurrogatePredictor::default();
                let q = SocialQuery { history: &h, goals: &goals, paths: &paths, seed: 0 };
                let a = sur.predict(&q).unwrap();
                let r = rot % n;
                let mut rotated = states.clone();
                rotated.rotate_left(r);
                let hr = scene(&rotated);
                let qr = SocialQuery { history: &hr, goals: &goals, paths: &paths, seed: 0 };
                let b = sur.predict(&qr).unwrap();
                for i in 0..n {
                    prop_assert_eq!(&a.distributions[(i + r) % n], &b.distributions[i]);
                }
                for d in &a.distributions {
                    prop_assert!(d.is_valid());
                }
            }

            #[test]
            fn far_agents_never_matter(own in any_state(), far_bearing in 0.0..6.28f64, extra in 0.01..30.0f64) {
                let sur = SurrogatePredictor::default();
                let r = sur.reach() + extra;
                let other = AgentState::new(
                    own.x + r * far_bearing.cos(), own.y + r * far_bearing.sin(), own.z, far_bearing + PI, 0.055,
                );
                let path = eastbound();
                let goals = [goal(), goal()];
                let h2 = scene(&[own, other]);
                let p2 = [&path, &path];
                let with = sur.predict_agent(&SocialQuery { history: &h2, goals: &goals, paths: &p2, seed: 0 }, 0).unwrap();
                let h1 = scene(&[own]);
                let p1 = [&path];
                let alone = sur.predict_agent(&SocialQuery { history: &h1, goals: &goals[..1], paths: &p1, seed: 0 }, 0).unwrap();
                prop_assert_eq!(with, alone);
            }
        }
    }
}
