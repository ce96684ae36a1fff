//! Aircraft state, the kinematic model and the discrete motion-primitive library.
//!
//! Frame: airport-centered, x East / y North / z up, all lengths in km and
//! times in seconds. Heading is measured counterclockwise from East.

use std::f64::consts::{PI, TAU};
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

/// Duration of every library primitive, in seconds.
pub const PRIMITIVE_DURATION: f64 = 20.0;
/// Integration and collision-sampling sub-step, in seconds.
pub const SUBSTEP: f64 = 1.0;
/// Number of sub-steps per primitive.
pub const SUBSTEPS: usize = 20;
/// Size of the standard primitive library.
pub const NUM_PRIMITIVES: usize = 252;

/// Commanded airspeeds in km/s, ascending.
pub const AIRSPEEDS: [f64; 6] = [0.030, 0.035, 0.040, 0.045, 0.050, 0.055];
/// Vertical rates in km/s, ascending.
pub const VERTICAL_RATES: [f64; 6] = [-0.005, -0.0025, -0.001, 0.0, 0.001, 0.0025];
/// Total heading change over one primitive, in degrees, ascending.
pub const HEADING_CHANGES_DEG: [f64; 7] = [-90.0, -45.0, -15.0, 0.0, 15.0, 45.0, 90.0];

/// Largest 3D speed any library primitive can produce, km/s.
pub fn max_speed_3d() -> f64 {
    let v = AIRSPEEDS[AIRSPEEDS.len() - 1];
    let w = VERTICAL_RATES.iter().fold(0.0_f64, |m, r| m.max(r.abs()));
    (v * v + w * w).sqrt()
}

/// Normalize an angle into `[0, 2π)`.
pub fn wrap_angle(a: f64) -> f64 {
    let w = a.rem_euclid(TAU);
    // rem_euclid can return TAU itself for tiny negative inputs
    if w >= TAU {
        0.0
    } else {
        w
    }
}

/// Signed smallest difference `a - b` in `(-π, π]`.
pub fn angle_diff(a: f64, b: f64) -> f64 {
    let d = wrap_angle(a - b);
    if d > PI {
        d - TAU
    } else {
        d
    }
}

/// Pose and airspeed of one aircraft at a tick.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub heading: f64,
    pub airspeed: f64,
}

impl AgentState {
    /// Builds a state, normalizing heading and clamping altitude and airspeed at zero.
    pub fn new(x: f64, y: f64, z: f64, heading: f64, airspeed: f64) -> Self {
        Self {
            x,
            y,
            z: z.max(0.0),
            heading: wrap_angle(heading),
            airspeed: airspeed.max(0.0),
        }
    }

    pub fn position(&self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    /// Horizontal velocity in km/s.
    pub fn velocity_xy(&self) -> [f64; 2] {
        [
            self.airspeed * self.heading.cos(),
            self.airspeed * self.heading.sin(),
        ]
    }

    pub fn translated(&self, dx: f64, dy: f64, dz: f64) -> Self {
        Self {
            x: self.x + dx,
            y: self.y + dy,
            z: (self.z + dz).max(0.0),
            ..*self
        }
    }
}

/// One fixed-duration maneuver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotionPrimitive {
    pub commanded_airspeed: f64,
    pub vertical_rate: f64,
    /// Total heading change over `duration`, radians.
    pub heading_change: f64,
    pub duration: f64,
}

impl MotionPrimitive {
    pub fn new(commanded_airspeed: f64, vertical_rate: f64, heading_change: f64) -> Self {
        Self {
            commanded_airspeed,
            vertical_rate,
            heading_change,
            duration: PRIMITIVE_DURATION,
        }
    }

    pub fn heading_rate(&self) -> f64 {
        self.heading_change / self.duration
    }
}

/// Grid coordinates of a library primitive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PrimitiveIndex {
    pub airspeed: usize,
    pub vertical_rate: usize,
    pub heading_change: usize,
}

impl PrimitiveIndex {
    pub fn flat(&self) -> usize {
        (self.airspeed * VERTICAL_RATES.len() + self.vertical_rate) * HEADING_CHANGES_DEG.len()
            + self.heading_change
    }

    pub fn from_flat(index: usize) -> Self {
        let nh = HEADING_CHANGES_DEG.len();
        let nv = VERTICAL_RATES.len();
        Self {
            airspeed: index / (nv * nh),
            vertical_rate: (index / nh) % nv,
            heading_change: index % nh,
        }
    }
}

/// The standard 252-primitive library, airspeed-major, then vertical rate, then heading change.
pub fn primitive_library() -> &'static [MotionPrimitive] {
    static LIBRARY: OnceLock<Vec<MotionPrimitive>> = OnceLock::new();
    LIBRARY.get_or_init(|| {
        let mut out = Vec::with_capacity(NUM_PRIMITIVES);
        for &v in &AIRSPEEDS {
            for &w in &VERTICAL_RATES {
                for &h in &HEADING_CHANGES_DEG {
                    out.push(MotionPrimitive::new(v, w, h.to_radians()));
                }
            }
        }
        out
    })
}

/// Library primitive by flat index.
///
/// Panics when `index >= NUM_PRIMITIVES`.
pub fn primitive(index: usize) -> MotionPrimitive {
    primitive_library()[index]
}

/// The 1 s sub-step states of `primitive` flown from `state`; the last entry is the end state.
///
/// Constant turn rate and speed. Airspeed jumps to the commanded value at the start, positions
/// advance along the mid-step heading, and altitude is clamped at the ground.
pub fn intermediate_states(state: &AgentState, primitive: &MotionPrimitive) -> Vec<AgentState> {
    let mut out = Vec::with_capacity(SUBSTEPS);
    integrate(state, primitive, |s| out.push(s));
    out
}

/// End state after flying `primitive` from `state`.
pub fn step_dynamics(state: &AgentState, primitive: &MotionPrimitive) -> AgentState {
    let mut last = *state;
    integrate(state, primitive, |s| last = s);
    last
}

fn integrate(state: &AgentState, primitive: &MotionPrimitive, mut emit: impl FnMut(AgentState)) {
    let steps = (primitive.duration / SUBSTEP).round().max(1.0) as usize;
    let dt = primitive.duration / steps as f64;
    let rate = primitive.heading_change / primitive.duration;
    let v = primitive.commanded_airspeed.max(0.0);
    let (mut x, mut y, mut z) = (state.x, state.y, state.z);
    // unwrapped heading; normalized on emit
    let mut psi = state.heading;
    for _ in 0..steps {
        let mid = psi + 0.5 * rate * dt;
        x += v * mid.cos() * dt;
        y += v * mid.sin() * dt;
        z = (z + primitive.vertical_rate * dt).max(0.0);
        psi += rate * dt;
        emit(AgentState {
            x,
            y,
            z,
            heading: wrap_angle(psi),
            airspeed: v,
        });
    }
}

/// Euclidean 3D distance between two aircraft.
pub fn separation(a: &AgentState, b: &AgentState) -> f64 {
    distance(&a.position(), &b.position())
}

pub fn distance(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    (dx * dx + dy * dy + dz * dz).sqrt()
}

/// Probability vector over primitives: non-negative, summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionDistribution {
    probabilities: Vec<f64>,
}

impl ActionDistribution {
    pub fn uniform(n: usize) -> Self {
        Self {
            probabilities: vec![1.0 / n as f64; n],
        }
    }

    /// Normalizes non-negative weights; all-zero weights give the uniform distribution.
    pub fn from_weights(weights: &[f64]) -> Self {
        let total: f64 = weights.iter().map(|w| w.max(0.0)).sum();
        if !(total > 0.0) || !total.is_finite() {
            return Self::uniform(weights.len());
        }
        Self {
            probabilities: weights.iter().map(|w| w.max(0.0) / total).collect(),
        }
    }

    /// Softmax.
    pub fn from_log_scores(scores: &[f64]) -> Self {
        let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return Self::uniform(scores.len());
        }
        let w: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
        Self::from_weights(&w)
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    pub fn len(&self) -> usize {
        self.probabilities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probabilities.is_empty()
    }

    pub fn get(&self, action: usize) -> f64 {
        self.probabilities[action]
    }

    /// Index of the largest probability, lowest index on ties.
    pub fn argmax(&self) -> usize {
        argmax(&self.probabilities)
    }

    pub fn is_valid(&self) -> bool {
        let sum: f64 = self.probabilities.iter().sum();
        !self.probabilities.is_empty()
            && self.probabilities.iter().all(|p| *p >= 0.0)
            && (sum - 1.0).abs() < 1e-9
    }
}

/// Index of the largest value, lowest index on ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Sub-step positions of every library primitive from one state, indexed `[primitive][k]`.
///
/// Used for reachable-set collision checks.
#[derive(Debug, Clone)]
pub struct PrimitiveFan {
    pub origin: AgentState,
    pub positions: Vec<[[f64; 3]; SUBSTEPS]>,
}

impl PrimitiveFan {
    pub fn new(origin: &AgentState) -> Self {
        let positions = primitive_library()
            .iter()
            .map(|p| {
                let mut arr = [[0.0; 3]; SUBSTEPS];
                for (k, s) in intermediate_states(origin, p).iter().enumerate() {
                    arr[k] = s.position();
                }
                arr
            })
            .collect();
        Self {
            origin: *origin,
            positions,
        }
    }

    /// Smallest distance between `path[k]` and any fan position at the same sub-step.
    ///
    /// Stops early once a distance below `floor` is seen.
    pub fn min_distance(&self, path: &[[f64; 3]], floor: f64) -> f64 {
        let reach = max_speed_3d();
        let o = self.origin.position();
        let mut best = f64::INFINITY;
        for (k, p) in path.iter().enumerate().take(SUBSTEPS) {
            // every fan point at sub-step k lies within reach*(k+1) of the origin
            let bound = distance(p, &o) - reach * (k as f64 + 1.0) * SUBSTEP;
            if bound >= best {
                continue;
            }
            for fan in &self.positions {
                let d = distance(p, &fan[k]);
                if d < best {
                    best = d;
                    if best < floor {
                        return best;
                    }
                }
            }
        }
        best
    }
}
