//! Traffic-pattern reference paths and the reference prior over primitives.

use std::f64::consts::FRAC_PI_4;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::airspace::{
    distance, primitive_library, step_dynamics, AgentState, ActionDistribution, NUM_PRIMITIVES,
    PRIMITIVE_DURATION,
};
use crate::error::ConfigError;

/// Spawn sector an approach path serves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Sector {
    E,
    NE,
    N,
    NW,
    W,
    SW,
    S,
    SE,
}

impl Sector {
    pub const ALL: [Sector; 8] = [
        Sector::E,
        Sector::NE,
        Sector::N,
        Sector::NW,
        Sector::W,
        Sector::SW,
        Sector::S,
        Sector::SE,
    ];

    /// Direction of the sector centre from the airport, counterclockwise from East.
    pub fn bearing(self) -> f64 {
        let k = Sector::ALL.iter().position(|s| *s == self).unwrap();
        k as f64 * FRAC_PI_4
    }

    pub fn label(self) -> &'static str {
        match self {
            Sector::E => "E",
            Sector::NE => "NE",
            Sector::N => "N",
            Sector::NW => "NW",
            Sector::W => "W",
            Sector::SW => "SW",
            Sector::S => "S",
            Sector::SE => "SE",
        }
    }
}

impl fmt::Display for Sector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Sector {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Sector::ALL
            .iter()
            .copied()
            .find(|sec| sec.label().eq_ignore_ascii_case(s))
            .ok_or_else(|| ConfigError::Invalid(format!("unknown sector {s:?}")))
    }
}

/// Landing threshold position and landing direction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunwayPose {
    pub x: f64,
    pub y: f64,
    /// Landing direction, degrees counterclockwise from East.
    pub heading_deg: f64,
}

impl Default for RunwayPose {
    fn default() -> Self {
        Self {
            x: 0.0,
            y: 0.0,
            heading_deg: 0.0,
        }
    }
}

impl RunwayPose {
    pub fn heading(&self) -> f64 {
        self.heading_deg.to_radians()
    }

    /// Runway-frame offset (along landing direction, to the left) into world coordinates.
    fn to_world(&self, along: f64, left: f64, z: f64) -> [f64; 3] {
        let (s, c) = self.heading().sin_cos();
        [
            self.x + along * c - left * s,
            self.y + along * s + left * c,
            z,
        ]
    }

    pub fn threshold(&self) -> [f64; 3] {
        [self.x, self.y, 0.0]
    }

    /// Goal state: on the threshold, aligned with the runway.
    pub fn goal_state(&self) -> AgentState {
        AgentState::new(self.x, self.y, 0.0, self.heading(), crate::airspace::AIRSPEEDS[0])
    }
}

/// Left-hand traffic pattern dimensions, km.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatternGeometry {
    pub pattern_altitude: f64,
    pub downwind_offset: f64,
    pub runway_length: f64,
    pub final_length: f64,
    /// Length of the 45° entry leg joining downwind abeam midfield.
    pub entry_leg: f64,
    pub spawn_radius: f64,
}

impl Default for PatternGeometry {
    fn default() -> Self {
        Self {
            pattern_altitude: 0.3,
            downwind_offset: 1.5,
            runway_length: 1.5,
            final_length: 1.5,
            entry_leg: 1.5,
            spawn_radius: 10.0,
        }
    }
}

/// Goal-terminated polyline an aircraft should follow.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPath", into = "RawPath")]
pub struct ReferencePath {
    waypoints: Vec<[f64; 3]>,
    entry_label: Sector,
    cumulative: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPath {
    entry_label: Sector,
    waypoints: Vec<[f64; 3]>,
}

impl TryFrom<RawPath> for ReferencePath {
    type Error = ConfigError;

    fn try_from(raw: RawPath) -> Result<Self, Self::Error> {
        ReferencePath::new(raw.waypoints, raw.entry_label)
    }
}

impl From<ReferencePath> for RawPath {
    fn from(p: ReferencePath) -> Self {
        RawPath {
            entry_label: p.entry_label,
            waypoints: p.waypoints,
        }
    }
}

/// Nearest point on a path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub distance: f64,
    /// Arc length from the first waypoint to the projected point.
    pub arc_length: f64,
    pub segment: usize,
}

impl ReferencePath {
    pub fn new(waypoints: Vec<[f64; 3]>, entry_label: Sector) -> Result<Self, ConfigError> {
        if waypoints.len() < 2 {
            return Err(ConfigError::Invalid(
                "reference path needs at least 2 waypoints".into(),
            ));
        }
        let mut cumulative = Vec::with_capacity(waypoints.len());
        cumulative.push(0.0);
        for w in waypoints.windows(2) {
            let len = distance(&w[0], &w[1]);
            if !(len > 0.0) {
                return Err(ConfigError::Invalid(
                    "consecutive reference waypoints must be distinct".into(),
                ));
            }
            cumulative.push(cumulative.last().unwrap() + len);
        }
        Ok(Self {
            waypoints,
            entry_label,
            cumulative,
        })
    }

    pub fn waypoints(&self) -> &[[f64; 3]] {
        &self.waypoints
    }

    pub fn entry_label(&self) -> Sector {
        self.entry_label
    }

    pub fn goal(&self) -> [f64; 3] {
        *self.waypoints.last().unwrap()
    }

    pub fn length(&self) -> f64 {
        *self.cumulative.last().unwrap()
    }

    /// Copy with the first waypoint replaced, e.g. by an actual spawn point.
    pub fn with_start(&self, start: [f64; 3]) -> Result<Self, ConfigError> {
        let mut w = self.waypoints.clone();
        w[0] = start;
        Self::new(w, self.entry_label)
    }

    pub fn translated(&self, d: [f64; 3]) -> Self {
        let w = self
            .waypoints
            .iter()
            .map(|p| [p[0] + d[0], p[1] + d[1], p[2] + d[2]])
            .collect();
        Self::new(w, self.entry_label).expect("translation keeps a valid path")
    }

    /// Point at arc length `s`, clamped to the path.
    pub fn point_at(&self, s: f64) -> [f64; 3] {
        let s = s.clamp(0.0, self.length());
        let i = match self.cumulative.iter().rposition(|&c| c <= s) {
            Some(i) if i + 1 < self.waypoints.len() => i,
            _ => self.waypoints.len() - 2,
        };
        let seg = self.cumulative[i + 1] - self.cumulative[i];
        let t = ((s - self.cumulative[i]) / seg).clamp(0.0, 1.0);
        let (a, b) = (self.waypoints[i], self.waypoints[i + 1]);
        [
            a[0] + t * (b[0] - a[0]),
            a[1] + t * (b[1] - a[1]),
            a[2] + t * (b[2] - a[2]),
        ]
    }

    /// Segment-wise nearest point; ties resolve to the earliest segment.
    pub fn project(&self, p: &[f64; 3]) -> Projection {
        let mut best = Projection {
            distance: f64::INFINITY,
            arc_length: 0.0,
            segment: 0,
        };
        for (i, w) in self.waypoints.windows(2).enumerate() {
            let (a, b) = (w[0], w[1]);
            let ab = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
            let ap = [p[0] - a[0], p[1] - a[1], p[2] - a[2]];
            let len2 = ab[0] * ab[0] + ab[1] * ab[1] + ab[2] * ab[2];
            let t = ((ap[0] * ab[0] + ap[1] * ab[1] + ap[2] * ab[2]) / len2).clamp(0.0, 1.0);
            let q = [a[0] + t * ab[0], a[1] + t * ab[1], a[2] + t * ab[2]];
            let d = distance(p, &q);
            if d < best.distance {
                let seg = self.cumulative[i + 1] - self.cumulative[i];
                best = Projection {
                    distance: d,
                    arc_length: self.cumulative[i] + t * seg,
                    segment: i,
                };
            }
        }
        best
    }
}

/// One approach path per entry sector for a left-hand pattern.
///
/// Each path runs spawn point → 45° entry start → downwind abeam midfield → downwind end →
/// base end → threshold, level at pattern altitude until downwind end and descending linearly
/// to the ground along base and final.
pub fn build_pattern_library(runway: &RunwayPose, geometry: &PatternGeometry) -> Vec<ReferencePath> {
    let g = geometry;
    let alt = g.pattern_altitude;
    let base_len = g.downwind_offset;
    let z_final = alt * g.final_length / (base_len + g.final_length);
    let diag = g.entry_leg * FRAC_PI_4.cos();
    let tail = [
        runway.to_world(0.5 * g.runway_length + diag, g.downwind_offset + diag, alt),
        runway.to_world(0.5 * g.runway_length, g.downwind_offset, alt),
        runway.to_world(-g.final_length, g.downwind_offset, alt),
        runway.to_world(-g.final_length, 0.0, z_final),
        runway.threshold(),
    ];
    Sector::ALL
        .iter()
        .map(|&sector| {
            let b = sector.bearing();
            let spawn = [
                runway.x + g.spawn_radius * b.cos(),
                runway.y + g.spawn_radius * b.sin(),
                alt,
            ];
            let mut w = vec![spawn];
            w.extend_from_slice(&tail);
            ReferencePath::new(w, sector).expect("pattern geometry yields a valid path")
        })
        .collect()
}

/// Serialized path library.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathLibraryFile {
    pub version: String,
    pub paths: Vec<ReferencePath>,
}

impl PathLibraryFile {
    pub fn new(paths: Vec<ReferencePath>) -> Self {
        Self {
            version: "v1".into(),
            paths,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("path library serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, ConfigError> {
        let file: PathLibraryFile = serde_json::from_str(s)?;
        if file.version != "v1" {
            return Err(ConfigError::Schema(format!(
                "unsupported path library version {:?}",
                file.version
            )));
        }
        Ok(file)
    }
}

/// 3D distance from the aircraft to the nearest point on the path.
pub fn cross_track_error(state: &AgentState, path: &ReferencePath) -> f64 {
    path.project(&state.position()).distance
}

/// Shape of the reference prior.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceParams {
    /// Cross-track penalty, 1/km.
    pub beta_x: f64,
    /// Backtracking penalty, 1/km.
    pub beta_p: f64,
    /// Penalty on the per-primitive distance gap to cruise speed, 1/km.
    pub beta_v: f64,
    /// km/s.
    pub cruise_airspeed: f64,
}

impl Default for ReferenceParams {
    fn default() -> Self {
        Self {
            beta_x: 2.0,
            beta_p: 4.0,
            beta_v: 1.0,
            cruise_airspeed: 0.040,
        }
    }
}

/// Unnormalized log-score of every library primitive flown from `state`.
pub fn reference_log_scores(
    state: &AgentState,
    path: &ReferencePath,
    params: &ReferenceParams,
) -> [f64; NUM_PRIMITIVES] {
    let here = path.project(&state.position());
    let mut out = [0.0; NUM_PRIMITIVES];
    for (slot, p) in out.iter_mut().zip(primitive_library()) {
        let next = step_dynamics(state, p);
        let proj = path.project(&next.position());
        let progress = proj.arc_length - here.arc_length;
        let speed_gap = (p.commanded_airspeed - params.cruise_airspeed).abs() * PRIMITIVE_DURATION;
        *slot = -params.beta_x * proj.distance
            - params.beta_p * (-progress).max(0.0)
            - params.beta_v * speed_gap;
    }
    out
}

/// Reference prior over primitives: softmax of [`reference_log_scores`].
pub fn reference_prior(
    state: &AgentState,
    path: &ReferencePath,
    params: &ReferenceParams,
) -> ActionDistribution {
    ActionDistribution::from_log_scores(&reference_log_scores(state, path, params))
}

/// State-only reference desirability `exp(-beta_x * cross_track_error)`, in `(0, 1]`.
pub fn reference_state_score(state: &AgentState, path: &ReferencePath, params: &ReferenceParams) -> f64 {
    (-params.beta_x * cross_track_error(state, path)).exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::airspace::{primitive, PrimitiveIndex, HEADING_CHANGES_DEG, VERTICAL_RATES};

    fn straight() -> ReferencePath {
        ReferencePath::new(vec![[0.0, 0.0, 0.3], [20.0, 0.0, 0.3]], Sector::W).unwrap()
    }

    #[test]
    fn library_shape() {
        let runway = RunwayPose::default();
        let lib = build_pattern_library(&runway, &PatternGeometry::default());
        assert_eq!(lib.len(), 8);
        for p in &lib {
            assert!(distance(&p.goal(), &runway.threshold()) < 1e-6);
            let first = p.waypoints()[0];
            let r = (first[0].powi(2) + first[1].powi(2)).sqrt();
            assert!((r - 10.0).abs() <= 0.1);
        }
        let labels: Vec<Sector> = lib.iter().map(|p| p.entry_label()).collect();
        assert_eq!(labels, Sector::ALL.to_vec());
    }

    #[test]
    fn library_follows_rotated_runway() {
        let runway = RunwayPose {
            x: 2.0,
            y: -1.0,
            heading_deg: 90.0,
        };
        let lib = build_pattern_library(&runway, &PatternGeometry::default());
        for p in &lib {
            assert!(distance(&p.goal(), &[2.0, -1.0, 0.0]) < 1e-9);
            // final approach runs along the landing direction (north)
            let w = p.waypoints();
            let f = w[w.len() - 2];
            assert!((f[0] - 2.0).abs() < 1e-9 && (f[1] - (-2.5)).abs() < 1e-9);
        }
    }

    #[test]
    fn path_validation() {
        assert!(ReferencePath::new(vec![[0.0; 3]], Sector::N).is_err());
        assert!(ReferencePath::new(vec![[0.0; 3], [0.0; 3]], Sector::N).is_err());
    }

    #[test]
    fn cross_track_examples() {
        let path = straight();
        let on = AgentState::new(0.0, 0.0, 0.3, 0.0, 0.04);
        assert_eq!(cross_track_error(&on, &path), 0.0);
        let off = AgentState::new(5.0, 1.0, 0.3, 0.0, 0.04);
        assert!((cross_track_error(&off, &path) - 1.0).abs() < 1e-12);
        let beyond = AgentState::new(20.5, 0.0, 0.3, 0.0, 0.04);
        // brute force over the polyline at 1 m spacing
        let mut brute = f64::INFINITY;
        let n = (path.length() / 0.001).round() as usize;
        for i in 0..=n {
            brute = brute.min(distance(&path.point_at(i as f64 * 0.001), &beyond.position()));
        }
        assert!((brute - 0.5).abs() < 1e-9);
        assert!((cross_track_error(&beyond, &path) - brute).abs() < 1e-9);
    }

    #[test]
    fn state_score_examples() {
        let path = straight();
        let params = ReferenceParams::default();
        let on = AgentState::new(3.0, 0.0, 0.3, 0.0, 0.04);
        assert_eq!(reference_state_score(&on, &path, &params), 1.0);
        let off = AgentState::new(3.0, 0.5, 0.3, 0.0, 0.04);
        assert!((reference_state_score(&off, &path, &params) - (-1.0_f64).exp()).abs() < 1e-12);
        let mut last = 1.0;
        for k in 1..20 {
            let s = AgentState::new(3.0, 0.1 * k as f64, 0.3, 0.0, 0.04);
            let score = reference_state_score(&s, &path, &params);
            assert!(score < last);
            last = score;
        }
    }

    /// Exhaustive scoring of every successor, independent of the softmax path.
    fn brute_argmax(state: &AgentState, path: &ReferencePath, params: &ReferenceParams) -> usize {
        let here = {
            let mut best = (f64::INFINITY, 0.0);
            let n = (path.length() / 0.001).round() as usize;
            for i in 0..=n {
                let s = i as f64 * 0.001;
                let d = distance(&path.point_at(s), &state.position());
                if d < best.0 {
                    best = (d, s);
                }
            }
            best.1
        };
        let mut best = (f64::NEG_INFINITY, 0);
        for i in 0..NUM_PRIMITIVES {
            let p = primitive(i);
            let next = step_dynamics(state, &p);
            let proj = path.project(&next.position());
            let score = -params.beta_x * proj.distance
                - params.beta_p * (here - proj.arc_length).max(0.0)
                - params.beta_v * (p.commanded_airspeed - params.cruise_airspeed).abs() * 20.0;
            if score > best.0 + 1e-9 {
                best = (score, i);
            }
        }
        best.1
    }

    #[test]
    fn aligned_on_straight_segment_prefers_straight_level_cruise() {
        let path = straight();
        let params = ReferenceParams::default();
        let s = AgentState::new(2.0, 0.0, 0.3, 0.0, 0.04);
        let prior = reference_prior(&s, &path, &params);
        let best = prior.argmax();
        assert_eq!(best, brute_argmax(&s, &path, &params));
        let idx = PrimitiveIndex::from_flat(best);
        assert_eq!(crate::airspace::AIRSPEEDS[idx.airspeed], 0.040);
        assert_eq!(VERTICAL_RATES[idx.vertical_rate], 0.0);
        assert_eq!(HEADING_CHANGES_DEG[idx.heading_change], 0.0);
    }

    #[test]
    fn offset_left_turns_back_toward_track() {
        let path = straight();
        let params = ReferenceParams::default();
        // north of an eastbound track is its left side
        let s = AgentState::new(2.0, 0.8, 0.3, 0.0, 0.04);
        let best = reference_prior(&s, &path, &params).argmax();
        assert_eq!(best, brute_argmax(&s, &path, &params));
        assert!(primitive(best).heading_change < 0.0);
    }

    #[test]
    fn prior_is_a_distribution() {
        let lib = build_pattern_library(&RunwayPose::default(), &PatternGeometry::default());
        let s = AgentState::new(-3.0, 4.0, 0.25, 1.0, 0.05);
        let p = reference_prior(&s, &lib[3], &ReferenceParams::default());
        assert!((p.probabilities().iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(p.probabilities().iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn library_json_round_trip_and_version_check() {
        let lib = build_pattern_library(&RunwayPose::default(), &PatternGeometry::default());
        let file = PathLibraryFile::new(lib);
        let back = PathLibraryFile::from_json(&file.to_json()).unwrap();
        assert_eq!(back, file);
        let bad = file.to_json().replace("\"v1\"", "\"v0\"");
        assert!(matches!(PathLibraryFile::from_json(&bad), Err(ConfigError::Schema(_))));
        let degenerate = r#"{"version":"v1","paths":[{"entry_label":"N","waypoints":[[0,0,0]]}]}"#;
        assert!(PathLibraryFile::from_json(degenerate).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(48))]

            #[test]
            fn prior_is_translation_invariant(
                x in -8.0..8.0f64, y in -8.0..8.0f64, h in 0.0..6.28f64,
                dx in -50.0..50.0f64, dy in -50.0..50.0f64, sector in 0usize..8,
            ) {
                let lib = build_pattern_library(&RunwayPose::default(), &PatternGeometry::default());
                let path = &lib[sector];
                let params = ReferenceParams::default();
                let s = AgentState::new(x, y, 0.3, h, 0.04);
                let a = reference_prior(&s, path, &params);
                let moved = path.translated([dx, dy, 0.0]);
                let b = reference_prior(&s.translated(dx, dy, 0.0), &moved, &params);
                for (p, q) in a.probabilities().iter().zip(b.probabilities()) {
                    prop_assert!((p - q).abs() < 1e-9);
                }
            }

            #[test]
            fn zero_error_only_on_polyline(t in 0.0..1.0f64, off in 1e-6..2.0f64, sector in 0usize..8) {
                let lib = build_pattern_library(&RunwayPose::default(), &PatternGeometry::default());
                let path = &lib[sector];
                let q = path.point_at(t * path.length());
                let on = AgentState::new(q[0], q[1], q[2], 0.0, 0.04);
                prop_assert!(cross_track_error(&on, path) < 1e-9);
                let above = AgentState::new(q[0], q[1], q[2] + off + 0.5, 0.0, 0.04);
                prop_assert!(cross_track_error(&above, path) > 1e-9);
            }
        }
    }
}
