//! Snapping free-form pilot commands onto the primitive grid.

use serde::{Deserialize, Serialize};
use sorts_core::airspace::{PrimitiveIndex, AIRSPEEDS, HEADING_CHANGES_DEG, PRIMITIVE_DURATION, VERTICAL_RATES};

/// Pilot command: km/s, km/s, rad/s (positive turns left).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Control {
    pub airspeed: f64,
    pub vertical_rate: f64,
    pub heading_rate: f64,
}

impl Control {
    /// Command equivalent to flying primitive `index`.
    pub fn of_primitive(index: usize) -> Self {
        let i = PrimitiveIndex::from_flat(index);
        Self {
            airspeed: AIRSPEEDS[i.airspeed],
            vertical_rate: VERTICAL_RATES[i.vertical_rate],
            heading_rate: heading_rates()[i.heading_change],
        }
    }
}

/// Heading-rate grid, rad/s.
pub fn heading_rates() -> [f64; 7] {
    HEADING_CHANGES_DEG.map(|d| d.to_radians() / PRIMITIVE_DURATION)
}

/// Grid slot nearest to `v`; an exact midpoint goes to the value of smaller magnitude.
pub fn nearest(grid: &[f64], v: f64) -> usize {
    let scale = grid.iter().fold(0.0_f64, |m, g| m.max(g.abs())).max(f64::MIN_POSITIVE);
    let tol = 1e-9 * scale;
    let mut best = 0;
    for (i, g) in grid.iter().enumerate().skip(1) {
        let (d, bd) = ((v - g).abs(), (v - grid[best]).abs());
        if d < bd - tol || ((d - bd).abs() <= tol && g.abs() < grid[best].abs()) {
            best = i;
        }
    }
    best
}

/// Primitive closest to the command, or `None` for non-finite input.
pub fn quantize(c: &Control) -> Option<(usize, Control)> {
    if !(c.airspeed.is_finite() && c.vertical_rate.is_finite() && c.heading_rate.is_finite()) {
        return None;
    }
    let index = PrimitiveIndex {
        airspeed: nearest(&AIRSPEEDS, c.airspeed),
        vertical_rate: nearest(&VERTICAL_RATES, c.vertical_rate),
        heading_change: nearest(&heading_rates(), c.heading_rate),
    }
    .flat();
    Some((index, Control::of_primitive(index)))
}
