use serde::{Deserialize, Serialize};

use crate::airspace::{intermediate_states, AgentState, MotionPrimitive};

/// Tick-sampled states of one aircraft plus the primitive flown between consecutive ticks.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub ticks: Vec<u32>,
    pub states: Vec<AgentState>,
    /// `primitives[i]` carries `states[i]` to `states[i + 1]`.
    pub primitives: Vec<MotionPrimitive>,
}

impl Trajectory {
    pub fn start(tick: u32, state: AgentState) -> Self {
        Self {
            ticks: vec![tick],
            states: vec![state],
            primitives: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn last(&self) -> Option<&AgentState> {
        self.states.last()
    }

    pub fn last_tick(&self) -> Option<u32> {
        self.ticks.last().copied()
    }

    /// Appends the state reached by flying `primitive` from the current end; returns it.
    ///
    /// Panics on an empty trajectory.
    pub fn advance(&mut self, primitive: MotionPrimitive) -> AgentState {
        let from = *self.states.last().expect("advance on empty trajectory");
        let next = crate::airspace::step_dynamics(&from, &primitive);
        self.push(primitive, next);
        next
    }

    pub fn push(&mut self, primitive: MotionPrimitive, state: AgentState) {
        let tick = self.ticks.last().map_or(0, |t| t + 1);
        self.ticks.push(tick);
        self.states.push(state);
        self.primitives.push(primitive);
    }

    /// The 1 s sub-step states of interval `i` (between tick states `i` and `i + 1`).
    pub fn substeps(&self, i: usize) -> Vec<AgentState> {
        intermediate_states(&self.states[i], &self.primitives[i])
    }

    /// Ticks strictly increasing by one and one primitive per interval.
    pub fn is_well_formed(&self) -> bool {
        self.ticks.len() == self.states.len()
            && self.primitives.len() + 1 == self.states.len().max(1)
            && self.ticks.windows(2).all(|w| w[1] == w[0] + 1)
    }

    /// Last `h` states, oldest first.
    pub fn window(&self, h: usize) -> &[AgentState] {
        let n = self.states.len();
        &self.states[n.saturating_sub(h)..]
    }
}
