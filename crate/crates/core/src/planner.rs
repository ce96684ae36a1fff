//! Social Monte Carlo tree search over the joint action space of the ego aircraft and its
//! nearest neighbour, plus the myopic single-step baseline.
//!
//! Each planning call builds a fresh two-agent tree whose plies alternate between the ego and
//! the partner. Selection maximizes `Q + c1 * P_S + c2 * P_R`; leaves are scored by the
//! visitation cost map; colliding branches are pruned; the returned action is the most visited
//! unpruned root action.

use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::airspace::{
    argmax, distance, intermediate_states, max_speed_3d, primitive, primitive_library,
    ActionDistribution, AgentState, PrimitiveFan, NUM_PRIMITIVES, PRIMITIVE_DURATION, SUBSTEPS,
};
use crate::costmap::CostMap;
use crate::reference::{reference_prior, reference_state_score, ReferenceParams, ReferencePath};
use crate::social::{AgentHistory, JointHistory, SocialError, SocialPredictor, SocialQuery};

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("agent {0} is not in the world snapshot")]
    UnknownAgent(u32),
    #[error("invalid planner configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Social(#[from] SocialError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlannerConfig {
    pub expansions_per_plan: u32,
    pub max_episode_steps: u32,
    pub c1: f64,
    pub c2: f64,
    /// Minimum separation, km.
    pub separation_d: f64,
    /// Children created per expansion, ranked by combined prior.
    pub branch_limit: usize,
    /// Plies below the root.
    pub max_tree_depth: u32,
    /// Distance to the goal counted as arrival, km.
    pub goal_radius: f64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            expansions_per_plan: 50,
            max_episode_steps: 100,
            c1: 2.0,
            c2: 5.0,
            separation_d: 0.2,
            branch_limit: 10,
            max_tree_depth: 10,
            goal_radius: 0.2,
        }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<(), PlanError> {
        let bad = |m: &str| Err(PlanError::Config(m.to_string()));
        if self.expansions_per_plan == 0 || self.max_episode_steps == 0 || self.max_tree_depth == 0 {
            return bad("expansion, step and depth limits must be positive");
        }
        if !(self.c1 >= 0.0 && self.c2 >= 0.0) {
            return bad("c1 and c2 must be non-negative");
        }
        if !(self.separation_d > 0.0 && self.goal_radius > 0.0) {
            return bad("separation_d and goal_radius must be positive");
        }
        if self.branch_limit == 0 || self.branch_limit > NUM_PRIMITIVES {
            return bad("branch_limit must be in 1..=252");
        }
        Ok(())
    }
}

/// One aircraft as seen by every planner at a tick.
#[derive(Debug, Clone)]
pub struct AgentView {
    pub id: u32,
    /// Recent states, oldest first; the last entry is the current state.
    pub history: Vec<AgentState>,
    pub path: Arc<ReferencePath>,
    pub goal: AgentState,
}

impl AgentView {
    pub fn state(&self) -> &AgentState {
        self.history.last().expect("agent view without a state")
    }
}

/// Immutable world state shared by all planners at one tick.
#[derive(Debug, Clone)]
pub struct WorldSnapshot {
    pub tick: u32,
    pub agents: Vec<AgentView>,
}

impl WorldSnapshot {
    pub fn agent(&self, id: u32) -> Option<&AgentView> {
        self.agents.iter().find(|a| a.id == id)
    }

    /// Nearest other agent by separation; lowest id on ties.
    pub fn nearest_to(&self, id: u32) -> Option<&AgentView> {
        let me = self.agent(id)?;
        self.agents
            .iter()
            .filter(|a| a.id != id)
            .map(|a| (crate::airspace::separation(me.state(), a.state()), a))
            .min_by(|x, y| x.0.total_cmp(&y.0).then(x.1.id.cmp(&y.1.id)))
            .map(|(_, a)| a)
    }

    pub fn joint_history(&self) -> JointHistory {
        JointHistory {
            tick: self.tick,
            agents: self
                .agents
                .iter()
                .map(|a| AgentHistory {
                    id: a.id,
                    states: a.history.clone(),
                })
                .collect(),
        }
    }
}

/// Shared read-only inputs of a planning call.
#[derive(Clone, Copy)]
pub struct PlanningContext<'a> {
    pub predictor: &'a dyn SocialPredictor,
    pub costmap: &'a CostMap,
    pub reference: &'a ReferenceParams,
    pub config: &'a PlannerConfig,
}

/// Root statistics of one expanded action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChildStats {
    pub action: usize,
    pub n: u32,
    pub q: f64,
    pub p_r: f64,
    pub p_s: f64,
    pub pruned: bool,
}

/// Outcome of one planning call; one line of the decision log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub tick: u32,
    pub agent: u32,
    pub planner: String,
    pub action: usize,
    /// Every root action was pruned and no action keeps separation against all neighbour
    /// manoeuvres.
    pub forced: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub partner: Option<u32>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub root: Vec<ChildStats>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub overrun: bool,
}

// Update rules.

/// Running mean of leaf values: `(n * q + v) / (n + 1)`.
pub fn q_update(n: u32, q: f64, v: f64) -> f64 {
    let n = f64::from(n);
    (n * q + v) / (n + 1.0)
}

/// Running mean of reference scores: `(n * p_r + r) / (n + 1)`.
pub fn p_r_update(n: u32, p_r: f64, r: f64) -> f64 {
    let n = f64::from(n);
    (n * p_r + r) / (n + 1.0)
}

/// Social exploration bonus `sqrt(N(s)) / (N(s, a) + 1) * p_s(s, a)`.
pub fn p_s_value(n_s: u32, n_sa: u32, prior: f64) -> f64 {
    f64::from(n_s).sqrt() / (f64::from(n_sa) + 1.0) * prior
}

/// Selection inputs of one expanded action.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeStats {
    pub action: usize,
    pub q: f64,
    pub p_s: f64,
    pub p_r: f64,
    pub pruned: bool,
}

/// Biased UCT score `Q + c1 * P_S + c2 * P_R`.
pub fn uct_score(e: &EdgeStats, c1: f64, c2: f64) -> f64 {
    e.q + c1 * e.p_s + c2 * e.p_r
}

/// Slot of the unpruned edge maximizing [`uct_score`], lowest action on ties; `None` when every
/// edge is pruned (a dead node).
pub fn select_edge(edges: &[EdgeStats], c1: f64, c2: f64) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (slot, e) in edges.iter().enumerate() {
        if e.pruned {
            continue;
        }
        let u = uct_score(e, c1, c2);
        best = match best {
            None => Some((slot, u)),
            Some((bs, bu)) => {
                if u > bu || (u == bu && e.action < edges[bs].action) {
                    Some((slot, u))
                } else {
                    Some((bs, bu))
                }
            }
        };
    }
    best.map(|(s, _)| s)
}

/// Top `k` actions by `p_s + p_r`, lowest index on ties, returned in ascending action order.
pub fn rank_actions(prior_social: &ActionDistribution, prior_reference: &ActionDistribution, k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..prior_social.len()).collect();
    let score = |a: usize| prior_social.get(a) + prior_reference.get(a);
    idx.sort_by(|&a, &b| score(b).total_cmp(&score(a)).then(a.cmp(&b)));
    idx.truncate(k);
    idx.sort_unstable();
    idx
}

// Tree.

pub type NodeId = usize;

const EGO: usize = 0;
const PARTNER: usize = 1;

#[derive(Debug, Clone)]
struct TreeAgent {
    state: AgentState,
    /// State before the most recent in-tree move.
    prev: Option<AgentState>,
    landed: bool,
    /// False for the phantom partner of a lone ego.
    active: bool,
    moves: u32,
    /// Sub-step positions of the most recent in-tree move.
    last_path: Option<Box<[[f64; 3]; SUBSTEPS]>>,
}

impl TreeAgent {
    fn live(&self) -> bool {
        self.active && !self.landed
    }
}

#[derive(Debug, Clone)]
pub struct Edge {
    pub action: usize,
    pub child: NodeId,
    pub n: u32,
    pub q: f64,
    pub p_r: f64,
    pub p_s: f64,
    /// Social prior of this action, renormalized over the expanded set.
    pub prior_s: f64,
}

#[derive(Debug, Clone)]
pub struct Node {
    agents: [TreeAgent; 2],
    pub mover: usize,
    pub depth: u32,
    pub n: u32,
    pub edges: Vec<Edge>,
    pub expanded: bool,
    pub pruned: bool,
}

impl Node {
    /// True once the ego has arrived; such nodes are never expanded.
    pub fn terminal(&self) -> bool {
        self.agents[EGO].landed
    }

    pub fn ego_state(&self) -> &AgentState {
        &self.agents[EGO].state
    }

    pub fn partner_state(&self) -> &AgentState {
        &self.agents[PARTNER].state
    }

    fn edge_stats(&self, nodes: &[Node]) -> Vec<EdgeStats> {
        self.edges
            .iter()
            .map(|e| EdgeStats {
                action: e.action,
                q: e.q,
                p_s: e.p_s,
                p_r: e.p_r,
                pruned: nodes[e.child].pruned,
            })
            .collect()
    }
}

/// Non-tree aircraft, checked for collisions at the root only.
#[derive(Debug, Clone)]
struct Bystander {
    history: Vec<AgentState>,
    path: Arc<ReferencePath>,
    goal: AgentState,
}

/// Two-agent search tree for a single planning call.
pub struct SearchTree<'a> {
    ctx: PlanningContext<'a>,
    nodes: Vec<Node>,
    paths: [Arc<ReferencePath>; 2],
    goals: [AgentState; 2],
    histories: [Vec<AgentState>; 2],
    bystanders: Vec<Bystander>,
    seed: u64,
}

const PHANTOM_OFFSET: f64 = 1.0e6;

fn landed_on(path: &[[f64; 3]], goal: &AgentState, radius: f64) -> bool {
    let g = goal.position();
    path.iter().any(|p| distance(p, &g) <= radius)
}

impl<'a> SearchTree<'a> {
    /// Tree rooted at the current joint state of `ego` and its nearest neighbour.
    pub fn new(ego: &AgentView, partner: Option<&AgentView>, others: &[&AgentView], ctx: PlanningContext<'a>, seed: u64) -> Self {
        let radius = ctx.config.goal_radius;
        let ego_agent = TreeAgent {
            state: *ego.state(),
            prev: None,
            landed: distance(&ego.state().position(), &ego.goal.position()) <= radius,
            active: true,
            moves: 0,
            last_path: None,
        };
        let (partner_agent, p_path, p_goal, p_hist) = match partner {
            Some(p) => (
                TreeAgent {
                    state: *p.state(),
                    prev: None,
                    landed: distance(&p.state().position(), &p.goal.position()) <= radius,
                    active: true,
                    moves: 0,
                    last_path: None,
                },
                p.path.clone(),
                p.goal,
                p.history.clone(),
            ),
            None => {
                let s = ego.state();
                let far = AgentState::new(s.x + PHANTOM_OFFSET, s.y + PHANTOM_OFFSET, s.z, 0.0, 0.0);
                (
                    TreeAgent {
                        state: far,
                        prev: None,
                        landed: false,
                        active: false,
                        moves: 0,
                        last_path: None,
                    },
                    ego.path.clone(),
                    far,
                    vec![far],
                )
            }
        };
        let root = Node {
            agents: [ego_agent, partner_agent],
            mover: EGO,
            depth: 0,
            n: 0,
            edges: Vec::new(),
            expanded: false,
            pruned: false,
        };
        Self {
            ctx,
            nodes: vec![root],
            paths: [ego.path.clone(), p_path],
            goals: [ego.goal, p_goal],
            histories: [ego.history.clone(), p_hist],
            bystanders: others
                .iter()
                .map(|o| Bystander {
                    history: o.history.clone(),
                    path: o.path.clone(),
                    goal: o.goal,
                })
                .collect(),
            seed,
        }
    }

    pub const ROOT: NodeId = 0;

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    /// False when the ego had no neighbour and the partner slot holds a placeholder.
    pub fn partner_active(&self) -> bool {
        self.nodes[Self::ROOT].agents[PARTNER].active
    }

    pub fn separation_d(&self) -> f64 {
        self.ctx.config.separation_d
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Social and reference priors of the mover at `id`.
    pub fn priors(&self, id: NodeId) -> Result<(ActionDistribution, ActionDistribution), PlanError> {
        let node = &self.nodes[id];
        let m = node.mover;
        let mover = &node.agents[m];
        let p_r = reference_prior(&mover.state, &self.paths[m], self.ctx.reference);

        // Scene: tree agents at their node states, bystanders dead-reckoned to the mover's time.
        let mut agents = Vec::with_capacity(2 + self.bystanders.len());
        let mut goals = Vec::with_capacity(agents.capacity());
        let mut paths: Vec<&ReferencePath> = Vec::with_capacity(agents.capacity());
        let mut mover_index = 0;
        for (k, a) in node.agents.iter().enumerate() {
            if !a.live() && k != m {
                continue;
            }
            if k == m {
                mover_index = agents.len();
            }
            let states = match a.prev {
                Some(prev) => vec![prev, a.state],
                None => self.histories[k].clone(),
            };
            agents.push(AgentHistory {
                id: k as u32,
                states,
            });
            goals.push(self.goals[k]);
            paths.push(&self.paths[k]);
        }
        let elapsed = mover.moves;
        for (b, by) in self.bystanders.iter().enumerate() {
            let states = if elapsed == 0 {
                by.history.clone()
            } else {
                let cur = by.history.last().unwrap();
                vec![dead_reckon(cur, elapsed - 1), dead_reckon(cur, elapsed)]
            };
            agents.push(AgentHistory {
                id: (2 + b) as u32,
                states,
            });
            goals.push(by.goal);
            paths.push(&by.path);
        }
        let history = JointHistory {
            tick: elapsed,
            agents,
        };
        let query = SocialQuery {
            history: &history,
            goals: &goals,
            paths: &paths,
            seed: self.seed,
        };
        let p_s = self.ctx.predictor.predict_agent(&query, mover_index)?;
        Ok((p_s, p_r))
    }

    /// Adds the top `branch_limit` actions of the mover as children.
    ///
    /// Children whose sub-step path can come within `separation_d` of the other aircraft are
    /// created pruned. An ego move is checked against every primitive the partner might fly over
    /// the same interval (and, at the root, against every bystander); a partner move is checked
    /// against the ego's move over that interval.
    pub fn expand(&mut self, id: NodeId, prior_social: &ActionDistribution, prior_reference: &ActionDistribution) {
        let cfg = *self.ctx.config;
        let d = cfg.separation_d;
        let actions = rank_actions(prior_social, prior_reference, cfg.branch_limit);
        let social_mass: f64 = actions.iter().map(|&a| prior_social.get(a)).sum();

        let node = self.nodes[id].clone();
        let m = node.mover;
        let other = 1 - m;
        let mover = &node.agents[m];
        let other_agent = &node.agents[other];

        let fans: Vec<PrimitiveFan> = if m == EGO {
            let mut fans = Vec::new();
            if other_agent.live() {
                fans.push(PrimitiveFan::new(&other_agent.state));
            }
            if id == Self::ROOT {
                let reach = 2.0 * max_speed_3d() * PRIMITIVE_DURATION + d;
                for b in &self.bystanders {
                    let s = b.history.last().unwrap();
                    if distance(&s.position(), &mover.state.position()) <= reach {
                        fans.push(PrimitiveFan::new(s));
                    }
                }
            }
            fans
        } else {
            Vec::new()
        };
        // partner move k shares its interval with ego move k
        let concurrent: Option<&[[f64; 3]; SUBSTEPS]> = if m == PARTNER
            && other_agent.live()
            && other_agent.moves == mover.moves + 1
        {
            other_agent.last_path.as_deref()
        } else {
            None
        };

        let mut edges = Vec::with_capacity(actions.len());
        for &a in &actions {
            let subs = intermediate_states(&mover.state, &primitive(a));
            let mut path = [[0.0; 3]; SUBSTEPS];
            for (k, s) in subs.iter().enumerate() {
                path[k] = s.position();
            }
            let mut collides = fans.iter().any(|f| f.min_distance(&path, d) < d);
            if let Some(c) = concurrent {
                collides |= path.iter().zip(c.iter()).any(|(p, q)| distance(p, q) < d);
            }
            let end = *subs.last().unwrap();
            let landed = landed_on(&path, &self.goals[m], cfg.goal_radius);
            let mut agents = node.agents.clone();
            agents[m] = TreeAgent {
                state: end,
                prev: Some(mover.state),
                landed,
                active: true,
                moves: mover.moves + 1,
                last_path: Some(Box::new(path)),
            };
            let next_mover = if agents[other].live() { other } else { m };
            let p_r = reference_state_score(&end, &self.paths[m], self.ctx.reference);
            let child = Node {
                agents,
                mover: next_mover,
                depth: node.depth + 1,
                n: 0,
                edges: Vec::new(),
                expanded: false,
                pruned: collides,
            };
            let child_id = self.nodes.len();
            self.nodes.push(child);
            let prior_s = if social_mass > 0.0 {
                prior_social.get(a) / social_mass
            } else {
                1.0 / actions.len() as f64
            };
            edges.push(Edge {
                action: a,
                child: child_id,
                n: 0,
                q: 0.5,
                p_r,
                p_s: p_s_value(node.n, 0, prior_s),
                prior_s,
            });
        }
        let n = &mut self.nodes[id];
        n.edges = edges;
        n.expanded = true;
    }

    /// Leaf value: zero if pruned, one once the ego has arrived, else the joint cost-map value.
    pub fn evaluate_leaf(&self, id: NodeId) -> f64 {
        let node = &self.nodes[id];
        if node.pruned {
            return 0.0;
        }
        if node.terminal() {
            return 1.0;
        }
        let states: Vec<AgentState> = node
            .agents
            .iter()
            .filter(|a| a.live())
            .map(|a| a.state)
            .collect();
        self.ctx.costmap.joint_value(&states)
    }

    /// Reference desirability of each tree agent's state at `id`.
    pub fn reference_scores(&self, id: NodeId) -> [f64; 2] {
        let node = &self.nodes[id];
        [EGO, PARTNER].map(|k| {
            if node.agents[k].active {
                reference_state_score(&node.agents[k].state, &self.paths[k], self.ctx.reference)
            } else {
                1.0
            }
        })
    }

    /// Applies the value and reference backups along `path` (root-first `(node, edge slot)`
    /// pairs), leaf to root.
    pub fn backpropagate(&mut self, path: &[(NodeId, usize)], value: f64, reference_scores: [f64; 2]) {
        for &(id, slot) in path.iter().rev() {
            let node = &mut self.nodes[id];
            let r = reference_scores[node.mover];
            let e = &mut node.edges[slot];
            e.q = q_update(e.n, e.q, value);
            e.p_r = p_r_update(e.n, e.p_r, r);
            e.n += 1;
            node.n += 1;
            let n_s = node.n;
            for e in &mut node.edges {
                e.p_s = p_s_value(n_s, e.n, e.prior_s);
            }
        }
    }

    /// Slot chosen by the tree policy at `id`, or `None` for a dead node.
    pub fn select(&self, id: NodeId) -> Option<usize> {
        let node = &self.nodes[id];
        let stats = node.edge_stats(&self.nodes);
        select_edge(&stats, self.ctx.config.c1, self.ctx.config.c2)
    }

    /// One select → expand → evaluate → backpropagate iteration. Returns false when every root
    /// action is pruned.
    pub fn iterate(&mut self) -> Result<bool, PlanError> {
        let max_depth = self.ctx.config.max_tree_depth;
        loop {
            let mut path = Vec::new();
            let mut id = Self::ROOT;
            let mut dead = false;
            while self.nodes[id].expanded && !self.nodes[id].terminal() {
                match self.select(id) {
                    Some(slot) => {
                        path.push((id, slot));
                        id = self.nodes[id].edges[slot].child;
                    }
                    None => {
                        self.nodes[id].pruned = true;
                        dead = true;
                        break;
                    }
                }
            }
            if dead {
                if id == Self::ROOT {
                    return Ok(false);
                }
                continue;
            }
            let leaf = &self.nodes[id];
            if !leaf.expanded && !leaf.terminal() && leaf.depth < max_depth {
                let (p_s, p_r) = self.priors(id)?;
                self.expand(id, &p_s, &p_r);
            }
            let value = self.evaluate_leaf(id);
            let scores = self.reference_scores(id);
            self.backpropagate(&path, value, scores);
            return Ok(true);
        }
    }

    pub fn root_stats(&self) -> Vec<ChildStats> {
        self.nodes[Self::ROOT]
            .edges
            .iter()
            .map(|e| ChildStats {
                action: e.action,
                n: e.n,
                q: e.q,
                p_r: e.p_r,
                p_s: e.p_s,
                pruned: self.nodes[e.child].pruned,
            })
            .collect()
    }

    /// Most visited unpruned root action, lowest index on ties.
    pub fn best_action(&self) -> Option<usize> {
        let root = &self.nodes[Self::ROOT];
        let mut best: Option<&Edge> = None;
        for e in &root.edges {
            if self.nodes[e.child].pruned {
                continue;
            }
            if best.is_none_or(|b| e.n > b.n || (e.n == b.n && e.action < b.action)) {
                best = Some(e);
            }
        }
        best.map(|e| e.action)
    }

    /// Every sub-step of every unpruned in-tree move keeps the required separation.
    pub fn check_unpruned_separation(&self) -> bool {
        let d = self.ctx.config.separation_d;
        let mut stack = vec![Self::ROOT];
        while let Some(id) = stack.pop() {
            let node = &self.nodes[id];
            for e in &node.edges {
                let child = &self.nodes[e.child];
                if child.pruned {
                    continue;
                }
                let (ego, partner) = (&child.agents[EGO], &child.agents[PARTNER]);
                if node.mover == PARTNER && ego.live() && ego.moves == partner.moves {
                    if let (Some(a), Some(b)) = (&ego.last_path, &partner.last_path) {
                        if a.iter().zip(b.iter()).any(|(p, q)| distance(p, q) < d) {
                            return false;
                        }
                    }
                }
                stack.push(e.child);
            }
        }
        true
    }
}

fn dead_reckon(s: &AgentState, ticks: u32) -> AgentState {
    let t = f64::from(ticks) * PRIMITIVE_DURATION;
    let [vx, vy] = s.velocity_xy();
    AgentState { x: s.x + vx * t, y: s.y + vy * t, ..*s }
}

/// Ego action maximizing the worst-case sub-step separation against every primitive each
/// neighbour might fly; lowest index on ties.
pub fn safest_action(ego: &AgentState, neighbours: &[&AgentState]) -> (usize, f64) {
    let fans: Vec<PrimitiveFan> = neighbours.iter().map(|s| PrimitiveFan::new(s)).collect();
    let mut best = (0, f64::NEG_INFINITY);
    for (a, prim) in primitive_library().iter().enumerate() {
        let path: Vec<[f64; 3]> = intermediate_states(ego, prim).iter().map(|s| s.position()).collect();
        let worst = fans
            .iter()
            .map(|f| f.min_distance(&path, f64::NEG_INFINITY))
            .fold(f64::INFINITY, f64::min);
        if worst > best.1 {
            best = (a, worst);
        }
    }
    best
}

/// Builds and searches the tree for `ego_id`, returning the chosen action and root statistics.
pub fn plan(
    ego_id: u32,
    world: &WorldSnapshot,
    ctx: PlanningContext<'_>,
    seed: u64,
) -> Result<Decision, PlanError> {
    plan_with_deadline(ego_id, world, ctx, seed, None)
}

/// As [`plan`], stopping early at `deadline`; the decision is then flagged `overrun`.
pub fn plan_with_deadline(
    ego_id: u32,
    world: &WorldSnapshot,
    ctx: PlanningContext<'_>,
    seed: u64,
    deadline: Option<Instant>,
) -> Result<Decision, PlanError> {
    search(ego_id, world, ctx, seed, deadline).map(|(_, d)| d)
}

/// Runs the search and returns the finished tree alongside the decision.
pub fn search<'a>(
    ego_id: u32,
    world: &WorldSnapshot,
    ctx: PlanningContext<'a>,
    seed: u64,
    deadline: Option<Instant>,
) -> Result<(SearchTree<'a>, Decision), PlanError> {
    let ego = world.agent(ego_id).ok_or(PlanError::UnknownAgent(ego_id))?;
    let partner = world.nearest_to(ego_id);
    let others: Vec<&AgentView> = world
        .agents
        .iter()
        .filter(|a| a.id != ego_id && Some(a.id) != partner.map(|p| p.id))
        .collect();
    let mut tree = SearchTree::new(ego, partner, &others, ctx, seed);
    let (p_s, p_r) = tree.priors(SearchTree::ROOT)?;
    tree.expand(SearchTree::ROOT, &p_s, &p_r);

    let mut overrun = false;
    let mut alive = true;
    for _ in 0..ctx.config.expansions_per_plan {
        if deadline.is_some_and(|d| Instant::now() >= d) {
            overrun = true;
            break;
        }
        if !tree.iterate()? {
            alive = false;
            break;
        }
    }
    let best = if alive { tree.best_action() } else { None };
    let (action, forced) = match best {
        Some(a) => (a, false),
        None => {
            let neighbours: Vec<&AgentState> = world
                .agents
                .iter()
                .filter(|a| a.id != ego_id)
                .map(|a| a.state())
                .collect();
            let (a, worst) = safest_action(ego.state(), &neighbours);
            (a, worst < ctx.config.separation_d)
        }
    };
    let decision = Decision {
        tick: world.tick,
        agent: ego_id,
        planner: "sorts".into(),
        action,
        forced,
        partner: partner.map(|p| p.id),
        root: tree.root_stats(),
        overrun,
    };
    Ok((tree, decision))
}

/// Index maximizing `lambda * p_r + (1 - lambda) * p_s`, lowest on ties.
pub fn ablation_choice(p_r: &[f64], p_s: &[f64], lambda: f64) -> usize {
    let mixed: Vec<f64> = p_r
        .iter()
        .zip(p_s)
        .map(|(r, s)| lambda * r + (1.0 - lambda) * s)
        .collect();
    argmax(&mixed)
}

/// Single-step baseline: no lookahead and no collision check.
pub fn ablation_plan(
    ego_id: u32,
    world: &WorldSnapshot,
    predictor: &dyn SocialPredictor,
    reference: &ReferenceParams,
    lambda: f64,
    seed: u64,
) -> Result<Decision, PlanError> {
    let idx = world
        .agents
        .iter()
        .position(|a| a.id == ego_id)
        .ok_or(PlanError::UnknownAgent(ego_id))?;
    let ego = &world.agents[idx];
    let history = world.joint_history();
    let goals: Vec<AgentState> = world.agents.iter().map(|a| a.goal).collect();
    let paths: Vec<&ReferencePath> = world.agents.iter().map(|a| a.path.as_ref()).collect();
    let query = SocialQuery {
        history: &history,
        goals: &goals,
        paths: &paths,
        seed,
    };
    let p_s = predictor.predict_agent(&query, idx)?;
    let p_r = reference_prior(ego.state(), &ego.path, reference);
    Ok(Decision {
        tick: world.tick,
        agent: ego_id,
        planner: "ablation".into(),
        action: ablation_choice(p_r.probabilities(), p_s.probabilities(), lambda),
        forced: false,
        partner: None,
        root: Vec::new(),
        overrun: false,
    })
}
