//! Static SVG figures: top-down trajectories and success-rate bars.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use sorts_core::EpisodeResult;

use crate::summary::{aggregate, read_summary};
use crate::CliError;

const SIZE: f64 = 800.0;
const MARGIN: f64 = 40.0;
const COLORS: [&str; 5] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"];

fn polyline(points: &[[f64; 2]], map: &dyn Fn([f64; 2]) -> [f64; 2], color: &str, class: &str, dashed: bool) -> String {
    let mut pts = String::new();
    for p in points {
        let [x, y] = map(*p);
        let _ = write!(pts, "{x:.2},{y:.2} ");
    }
    let dash = if dashed { r#" stroke-dasharray="8 5""# } else { "" };
    format!(
        r#"<polyline class="{class}" points="{}" fill="none" stroke="{color}" stroke-width="2"{dash}/>"#,
        pts.trim_end()
    )
}

/// Top-down view of one episode: reference paths solid, flown trajectories dashed.
pub fn trajectory_svg(r: &EpisodeResult) -> String {
    let refs: Vec<Vec<[f64; 2]>> = r
        .paths
        .iter()
        .map(|p| p.waypoints().iter().map(|w| [w[0], w[1]]).collect())
        .collect();
    let flown: Vec<Vec<[f64; 2]>> = r
        .trajectories
        .iter()
        .map(|t| t.states.iter().map(|s| [s.x, s.y]).collect())
        .collect();
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for p in refs.iter().chain(&flown).flatten() {
        for k in 0..2 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    let span = (hi[0] - lo[0]).max(hi[1] - lo[1]).max(1e-6);
    let scale = (SIZE - 2.0 * MARGIN) / span;
    let map = move |p: [f64; 2]| [MARGIN + (p[0] - lo[0]) * scale, SIZE - MARGIN - (p[1] - lo[1]) * scale];

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#);
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let rw = &r.spec.airport.runway;
    let [tx, ty] = map([rw.x, rw.y]);
    let _ = writeln!(s, r#"<circle class="runway" cx="{tx:.2}" cy="{ty:.2}" r="5" fill="black"/>"#);
    for (i, pts) in refs.iter().enumerate() {
        let _ = writeln!(s, "{}", polyline(pts, &map, COLORS[i % COLORS.len()], "reference", false));
    }
    for (i, pts) in flown.iter().enumerate() {
        let _ = writeln!(s, "{}", polyline(pts, &map, COLORS[i % COLORS.len()], "executed", true));
    }
    for (i, a) in r.agents.iter().enumerate() {
        let label = format!("agent {} ({}): {:?}", a.id, a.planner.label(), a.outcome);
        let _ = writeln!(
            s,
            r#"<text x="10" y="{}" font-family="sans-serif" font-size="14" fill="{}">{label}</text>"#,
            20 + 18 * i,
            COLORS[i % COLORS.len()]
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Success rate per agent count, one bar per algorithm.
pub fn success_bars_svg(rows: &[crate::SummaryRow]) -> String {
    let cells = aggregate(rows);
    let counts: BTreeSet<usize> = cells.keys().map(|(n, _)| *n).collect();
    let algos: BTreeSet<&str> = cells.keys().map(|(_, a)| a.as_str()).collect();
    let (w, h) = (SIZE, 400.0);
    let group = (w - 2.0 * MARGIN) / counts.len().max(1) as f64;
    let bar = group * 0.8 / algos.len().max(1) as f64;
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (gi, n) in counts.iter().enumerate() {
        let gx = MARGIN + gi as f64 * group + 0.1 * group;
        for (ai, algo) in algos.iter().enumerate() {
            let Some(c) = cells.get(&(*n, algo.to_string())) else { continue };
            let bh = (h - 2.0 * MARGIN) * c.success_pct / 100.0;
            let x = gx + ai as f64 * bar;
            let _ = writeln!(
                s,
                r#"<rect class="bar" data-agents="{n}" data-algorithm="{algo}" x="{x:.2}" y="{:.2}" width="{:.2}" height="{bh:.2}" fill="{}"/>"#,
                h - MARGIN - bh,
                bar * 0.95,
                COLORS[ai % COLORS.len()]
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="14" text-anchor="middle">{n} agents</text>"#,
            gx + 0.4 * group,
            h - MARGIN / 3.0
        );
    }
    for (ai, algo) in algos.iter().enumerate() {
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="14" fill="{}">{algo}</text>"#,
            MARGIN,
            20 + 18 * ai,
            COLORS[ai % COLORS.len()]
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Writes one trajectory figure per episode file in the summary plus `success.svg`.
/// Returns the files written; an empty summary writes nothing.
pub fn cmd_plot(summary: &Path, out_dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let rows = read_summary(summary)?;
    if rows.is_empty() {
        log::warn!("{} has no rows; nothing to plot", summary.display());
        return Ok(Vec::new());
    }
    let base = summary.parent().unwrap_or(Path::new("."));
    std::fs::create_dir_all(out_dir).map_err(|e| CliError::Internal(e.to_string()))?;
    let mut written = Vec::new();
    let files: BTreeSet<&str> = rows.iter().map(|r| r.file.as_str()).collect();
    for file in files {
        let text = std::fs::read_to_string(base.join(file))?;
        let result = EpisodeResult::from_json(&text)?;
        let stem = Path::new(file)
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("episode");
        let path = out_dir.join(format!("{stem}.svg"));
        std::fs::write(&path, trajectory_svg(&result)).map_err(|e| CliError::Internal(e.to_string()))?;
        written.push(path);
    }
    let path = out_dir.join("success.svg");
    std::fs::write(&path, success_bars_svg(&rows)).map_err(|e| CliError::Internal(e.to_string()))?;
    written.push(path);
    Ok(written)
}
