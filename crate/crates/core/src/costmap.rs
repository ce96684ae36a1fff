//! Visitation-frequency value grid over the terminal airspace.

use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::airspace::AgentState;
use crate::reference::ReferencePath;

const MAGIC: &[u8; 4] = b"SCMP";
const FORMAT_VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum CostMapError {
    #[error("cannot build a cost map from an empty path library")]
    EmptyLibrary,
    #[error("bad cost map file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Synthetic traffic generation settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostMapParams {
    pub samples_per_path: usize,
    /// Isotropic Gaussian position noise, km.
    pub noise_sigma: f64,
    pub seed: u64,
    pub cell_size: [f64; 3],
    /// Arc-length spacing of samples along each path, km.
    pub sample_spacing: f64,
}

impl Default for CostMapParams {
    fn default() -> Self {
        Self {
            samples_per_path: 1000,
            noise_sigma: 0.15,
            seed: 7,
            cell_size: [0.25, 0.25, 0.05],
            sample_spacing: 0.1,
        }
    }
}

/// Dense 3D grid of values in `[0, 1]`, row-major with z fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostMap {
    pub origin: [f64; 3],
    pub cell_size: [f64; 3],
    pub dims: [usize; 3],
    pub values: Vec<f64>,
}

impl CostMap {
    pub fn filled(origin: [f64; 3], cell_size: [f64; 3], dims: [usize; 3], value: f64) -> Self {
        Self {
            origin,
            cell_size,
            dims,
            values: vec![value.clamp(0.0, 1.0); dims[0] * dims[1] * dims[2]],
        }
    }

    pub fn cell_of(&self, p: &[f64; 3]) -> Option<[usize; 3]> {
        let mut out = [0usize; 3];
        for k in 0..3 {
            let f = ((p[k] - self.origin[k]) / self.cell_size[k]).floor();
            if !(f >= 0.0) || f >= self.dims[k] as f64 {
                return None;
            }
            out[k] = f as usize;
        }
        Some(out)
    }

    pub fn flat(&self, c: [usize; 3]) -> usize {
        (c[0] * self.dims[1] + c[1]) * self.dims[2] + c[2]
    }

    pub fn cell_center(&self, c: [usize; 3]) -> [f64; 3] {
        [
            self.origin[0] + (c[0] as f64 + 0.5) * self.cell_size[0],
            self.origin[1] + (c[1] as f64 + 0.5) * self.cell_size[1],
            self.origin[2] + (c[2] as f64 + 0.5) * self.cell_size[2],
        ]
    }

    /// Value of the cell containing `p`; zero outside the grid.
    pub fn value_at(&self, p: &[f64; 3]) -> f64 {
        self.cell_of(p).map_or(0.0, |c| self.values[self.flat(c)])
    }

    /// Mean cell value over the aircraft; positions off the grid count as zero.
    pub fn joint_value(&self, states: &[AgentState]) -> f64 {
        if states.is_empty() {
            return 0.0;
        }
        let mut vals: Vec<f64> = states.iter().map(|s| self.value_at(&s.position())).collect();
        // summation order fixed by value so agent order cannot change the result
        vals.sort_by(f64::total_cmp);
        vals.iter().sum::<f64>() / states.len() as f64
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().cloned().fold(0.0, f64::max)
    }

    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<(), CostMapError> {
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        for d in self.dims {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for v in self.origin.iter().chain(&self.cell_size).chain(&self.values) {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self, CostMapError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(CostMapError::Format("bad magic".into()));
        }
        let mut v2 = [0u8; 2];
        r.read_exact(&mut v2)?;
        let version = u16::from_le_bytes(v2);
        if version != FORMAT_VERSION {
            return Err(CostMapError::Format(format!("unsupported version {version}")));
        }
        let mut b8 = [0u8; 8];
        let mut dims = [0usize; 3];
        for d in &mut dims {
            r.read_exact(&mut b8)?;
            *d = usize::try_from(u64::from_le_bytes(b8))
                .map_err(|_| CostMapError::Format("dimension overflow".into()))?;
        }
        let mut read_f64 = |r: &mut R| -> Result<f64, CostMapError> {
            r.read_exact(&mut b8)?;
            Ok(f64::from_le_bytes(b8))
        };
        let mut origin = [0.0; 3];
        let mut cell_size = [0.0; 3];
        for o in &mut origin {
            *o = read_f64(&mut r)?;
        }
        for c in &mut cell_size {
            *c = read_f64(&mut r)?;
        }
        let n = dims
            .iter()
            .try_fold(1usize, |acc, d| acc.checked_mul(*d))
            .ok_or_else(|| CostMapError::Format("dimension overflow".into()))?;
        let mut values = Vec::with_capacity(n.min(1 << 24));
        for _ in 0..n {
            values.push(read_f64(&mut r)?);
        }
        Ok(Self {
            origin,
            cell_size,
            dims,
            values,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("cost map serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, CostMapError> {
        serde_json::from_str(s).map_err(|e| CostMapError::Format(e.to_string()))
    }
}

/// Raw visitation counts before normalization.
#[derive(Debug, Clone)]
pub struct VisitHistogram {
    pub grid: CostMap,
    pub counts: Vec<u64>,
}

impl VisitHistogram {
    pub fn max_count(&self) -> u64 {
        self.counts.iter().copied().max().unwrap_or(0)
    }

    /// `log(1 + count) / log(1 + max_count)` per cell.
    pub fn normalized(&self) -> CostMap {
        let max = self.max_count();
        let mut grid = self.grid.clone();
        let denom = (max as f64).ln_1p();
        for (v, c) in grid.values.iter_mut().zip(&self.counts) {
            *v = if max == 0 {
                0.0
            } else {
                (*c as f64).ln_1p() / denom
            };
        }
        grid
    }
}

fn grid_for(paths: &[ReferencePath], params: &CostMapParams) -> CostMap {
    let margin = 5.0 * params.noise_sigma + 2.0 * params.cell_size[0].max(params.cell_size[1]);
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in paths {
        for w in p.waypoints() {
            for k in 0..3 {
                lo[k] = lo[k].min(w[k]);
                hi[k] = hi[k].max(w[k]);
            }
        }
    }
    let mut origin = [0.0; 3];
    let mut dims = [0usize; 3];
    for k in 0..3 {
        let cs = params.cell_size[k];
        // altitude starts at the ground
        let start = if k == 2 { 0.0 } else { ((lo[k] - margin) / cs).floor() * cs };
        let end = hi[k] + margin;
        origin[k] = start;
        dims[k] = ((end - start) / cs).ceil().max(1.0) as usize;
    }
    CostMap::filled(origin, params.cell_size, dims, 0.0)
}

/// Bins seeded noisy samples of every path into a visitation histogram.
pub fn build_histogram(
    paths: &[ReferencePath],
    params: &CostMapParams,
) -> Result<VisitHistogram, CostMapError> {
    if paths.is_empty() {
        return Err(CostMapError::EmptyLibrary);
    }
    let grid = grid_for(paths, params);
    let mut counts = vec![0u64; grid.values.len()];
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let noise = Normal::new(0.0, params.noise_sigma.max(0.0))
        .map_err(|e| CostMapError::Format(e.to_string()))?;
    for path in paths {
        let n = (path.length() / params.sample_spacing).floor() as usize;
        let base: Vec<[f64; 3]> = (0..=n)
            .map(|i| path.point_at(i as f64 * params.sample_spacing))
            .collect();
        for _ in 0..params.samples_per_path {
            for q in &base {
                let p = [
                    q[0] + noise.sample(&mut rng),
                    q[1] + noise.sample(&mut rng),
                    q[2] + noise.sample(&mut rng),
                ];
                if let Some(c) = grid.cell_of(&p) {
                    counts[grid.flat(c)] += 1;
                }
            }
        }
    }
    Ok(VisitHistogram { grid, counts })
}

/// Log-normalized visitation map synthesized from the reference library.
pub fn build_costmap(paths: &[ReferencePath], params: &CostMapParams) -> Result<CostMap, CostMapError> {
    Ok(build_histogram(paths, params)?.normalized())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::airspace::distance;
    use crate::reference::{build_pattern_library, PatternGeometry, RunwayPose};

    fn small_params() -> CostMapParams {
        CostMapParams {
            samples_per_path: 60,
            ..CostMapParams::default()
        }
    }

    fn library() -> Vec<ReferencePath> {
        build_pattern_library(&RunwayPose::default(), &PatternGeometry::default())
    }

    #[test]
    fn empty_library_is_rejected() {
        assert!(matches!(
            build_costmap(&[], &CostMapParams::default()),
            Err(CostMapError::EmptyLibrary)
        ));
    }

    #[test]
    fn values_normalized_with_a_unit_peak() {
        let map = build_costmap(&library(), &small_params()).unwrap();
        assert!(map.values.iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(map.max_value(), 1.0);
    }

    #[test]
    fn far_cells_are_zero() {
        let paths = library();
        let params = small_params();
        let map = build_costmap(&paths, &params).unwrap();
        let half_diag = 0.5
            * (params.cell_size.iter().map(|c| c * c).sum::<f64>()).sqrt();
        let mut checked = 0;
        for ix in (0..map.dims[0]).step_by(3) {
            for iy in (0..map.dims[1]).step_by(3) {
                for iz in 0..map.dims[2] {
                    let c = [ix, iy, iz];
                    let centre = map.cell_center(c);
                    let near = paths
                        .iter()
                        .map(|p| p.project(&centre).distance)
                        .fold(f64::INFINITY, f64::min);
                    if near > 5.0 * params.noise_sigma + half_diag {
                        checked += 1;
                        assert_eq!(map.values[map.flat(c)], 0.0, "cell {c:?}");
                    }
                }
            }
        }
        assert!(checked > 1000);
    }

    #[test]
    fn same_seed_same_grid() {
        let a = build_costmap(&library(), &small_params()).unwrap();
        let b = build_costmap(&library(), &small_params()).unwrap();
        assert!(a.values.iter().zip(&b.values).all(|(x, y)| x.to_bits() == y.to_bits()));
        let c = build_costmap(
            &library(),
            &CostMapParams {
                seed: 8,
                ..small_params()
            },
        )
        .unwrap();
        assert_ne!(a.values, c.values);
    }

    #[test]
    fn more_trajectories_never_lower_the_peak_count() {
        let lib = library();
        let few = build_histogram(&lib[..2], &small_params()).unwrap();
        let more = build_histogram(&lib, &small_params()).unwrap();
        assert!(more.max_count() >= few.max_count());
    }

    #[test]
    fn joint_value_examples() {
        let map = build_costmap(&library(), &small_params()).unwrap();
        let peak = map.values.iter().position(|v| *v == 1.0).unwrap();
        let nz = map.dims[2];
        let ny = map.dims[1];
        let c = [peak / (ny * nz), (peak / nz) % ny, peak % nz];
        let p = map.cell_center(c);
        let at_peak = AgentState::new(p[0], p[1], p[2], 0.0, 0.04);
        assert_eq!(map.joint_value(&[at_peak]), 1.0);
        let outside = AgentState::new(500.0, 0.0, 0.3, 0.0, 0.04);
        assert_eq!(map.joint_value(&[at_peak, outside]), 0.5);
        assert_eq!(map.joint_value(&[outside, at_peak]), 0.5);
        assert!(distance(&p, &[0.0; 3]) < 20.0);
    }

    #[test]
    fn binary_and_json_round_trip() {
        let map = build_costmap(&library()[..1], &small_params()).unwrap();
        let mut buf = Vec::new();
        map.write_binary(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"SCMP");
        assert_eq!(u16::from_le_bytes([buf[4], buf[5]]), 1);
        assert_eq!(buf.len(), 4 + 2 + 24 + 48 + 8 * map.values.len());
        assert_eq!(CostMap::read_binary(&buf[..]).unwrap(), map);
        assert_eq!(CostMap::from_json(&map.to_json()).unwrap(), map);
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(CostMap::read_binary(&bad[..]).is_err());
        assert!(CostMap::read_binary(&buf[..buf.len() - 3]).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn joint_value_bounded_and_symmetric(
                pts in proptest::collection::vec((-12.0..12.0f64, -12.0..12.0f64, 0.0..0.6f64), 1..6)
            ) {
                let map = CostMap {
                    origin: [-2.0, -2.0, 0.0],
                    cell_size: [0.5, 0.5, 0.1],
                    dims: [8, 8, 4],
                    values: (0..256).map(|i| (i % 17) as f64 / 16.0).collect(),
                };
                let states: Vec<AgentState> =
                    pts.iter().map(|p| AgentState::new(p.0, p.1, p.2, 0.0, 0.04)).collect();
                let v = map.joint_value(&states);
                prop_assert!((0.0..=1.0).contains(&v));
                let mut rev = states.clone();
                rev.reverse();
                prop_assert_eq!(map.joint_value(&rev), v);
            }
        }
    }
}
