//! Self-contained SVG rendering for the CSV tables.
//!
//! Output is a pure function of the parsed rows and flags: fixed canvas,
//! fixed formatting, no timestamps. Identical inputs give byte-identical
//! files.

use std::fmt::Write as _;

use routhsim_core::io::{ReducedTable, TrajectoryTable};

use crate::ChartKind;

const TS_W: f64 = 720.0;
const TS_H: f64 = 480.0;
const PLANE_SIDE: f64 = 560.0;
const MARGIN: f64 = 56.0;
/// Cap on rendered points per polyline. Longer series are thinned by a
/// uniform stride that always keeps the final sample.
const MAX_POINTS: usize = 1500;
const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
];

/// Time series of the first reduced coordinate, one color per momentum
/// segment, with the switching surface drawn as a horizontal line.
pub fn reduced_svg(table: &ReducedTable, guard_level: f64) -> String {
    let series = split_consecutive(table.rows.iter().map(|r| (r.segment, (r.t, r.x[0]))));
    let title = format!("reduced trajectory, {} segments", series.len());
    time_series(&title, "t", "x0", &series, Some(guard_level))
}

/// Plane view of a two-coordinate trajectory (one color per arc, switching
/// surface as a circle), or a time series for one degree of freedom.
pub fn trajectory_svg(table: &TrajectoryTable, chart: ChartKind, guard_level: f64) -> String {
    if table.dim == 1 {
        let series = split_consecutive(table.rows.iter().map(|r| (r.arc, (r.t, r.q[0]))));
        let title = format!("trajectory, {} arcs", series.len());
        return time_series(&title, "t", "q0", &series, Some(guard_level));
    }
    let to_plane = |q: &[f64]| match chart {
        ChartKind::Polar => (q[0] * q[1].cos(), q[0] * q[1].sin()),
        ChartKind::Cartesian => (q[0], q[1]),
    };
    let series = split_consecutive(table.rows.iter().map(|r| (r.arc, to_plane(&r.q))));
    let title = format!("trajectory, {} arcs", series.len());
    plane(&title, &series, guard_level)
}

/// Groups an ordered row stream into one polyline per arc/segment index.
fn split_consecutive(items: impl Iterator<Item = (usize, (f64, f64))>) -> Vec<Vec<(f64, f64)>> {
    let mut out: Vec<Vec<(f64, f64)>> = Vec::new();
    let mut current = None;
    for (idx, p) in items {
        if current != Some(idx) {
            out.push(Vec::new());
            current = Some(idx);
        }
        out.last_mut().unwrap().push(p);
    }
    out
}

fn thin(points: &[(f64, f64)]) -> Vec<(f64, f64)> {
    if points.len() <= MAX_POINTS {
        return points.to_vec();
    }
    let stride = points.len().div_ceil(MAX_POINTS);
    let mut out: Vec<(f64, f64)> = points.iter().copied().step_by(stride).collect();
    let last = points[points.len() - 1];
    if out.last() != Some(&last) {
        out.push(last);
    }
    out
}

struct Axis {
    min: f64,
    max: f64,
}

impl Axis {
    fn of(values: impl Iterator<Item = f64>) -> Axis {
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        for v in values {
            if v.is_finite() {
                min = min.min(v);
                max = max.max(v);
            }
        }
        if !min.is_finite() || !max.is_finite() {
            return Axis { min: 0.0, max: 1.0 };
        }
        if max - min < 1e-12 {
            min -= 0.5;
            max += 0.5;
        }
        Axis { min, max }
    }

    fn pad(mut self, frac: f64) -> Axis {
        let p = (self.max - self.min) * frac;
        self.min -= p;
        self.max += p;
        self
    }

    fn to_px(&self, v: f64, lo_px: f64, hi_px: f64) -> f64 {
        lo_px + (v - self.min) / (self.max - self.min) * (hi_px - lo_px)
    }
}

fn open_svg(s: &mut String, w: f64, h: f64) {
    let _ = writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w:.0}\" height=\"{h:.0}\" viewBox=\"0 0 {w:.0} {h:.0}\">"
    );
    let _ = writeln!(
        s,
        "<style>text {{ font: 12px monospace; fill: #444; }}</style>"
    );
    let _ = writeln!(
        s,
        "<rect width=\"{w:.0}\" height=\"{h:.0}\" fill=\"#ffffff\"/>"
    );
}

fn polyline(s: &mut String, pts: &[(f64, f64)], color: &str) {
    if pts.is_empty() {
        return;
    }
    if pts.len() == 1 {
        let _ = writeln!(
            s,
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"2\" fill=\"{color}\"/>",
            pts[0].0, pts[0].1
        );
        return;
    }
    let _ = write!(
        s,
        "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.2\" points=\""
    );
    for (i, (x, y)) in pts.iter().enumerate() {
        if i > 0 {
            s.push(' ');
        }
        let _ = write!(s, "{x:.2},{y:.2}");
    }
    s.push_str("\"/>\n");
}

fn text(s: &mut String, x: f64, y: f64, anchor: &str, body: &str) {
    let _ = writeln!(
        s,
        "<text x=\"{x:.2}\" y=\"{y:.2}\" text-anchor=\"{anchor}\">{body}</text>"
    );
}

fn time_series(
    title: &str,
    xlabel: &str,
    ylabel: &str,
    series: &[Vec<(f64, f64)>],
    guard: Option<f64>,
) -> String {
    let x = Axis::of(series.iter().flatten().map(|p| p.0)).pad(0.02);
    let y = Axis::of(series.iter().flatten().map(|p| p.1).chain(guard)).pad(0.08);
    let px = |v: f64| x.to_px(v, MARGIN, TS_W - MARGIN);
    let py = |v: f64| y.to_px(v, TS_H - MARGIN, MARGIN);

    let mut s = String::new();
    open_svg(&mut s, TS_W, TS_H);
    let _ = writeln!(
        s,
        "<rect x=\"{m:.0}\" y=\"{m:.0}\" width=\"{w:.0}\" height=\"{h:.0}\" fill=\"none\" stroke=\"#cccccc\"/>",
        m = MARGIN,
        w = TS_W - 2.0 * MARGIN,
        h = TS_H - 2.0 * MARGIN
    );
    if let Some(g) = guard {
        if g >= y.min && g <= y.max {
            let gy = py(g);
            let _ = writeln!(
                s,
                "<line x1=\"{:.2}\" y1=\"{gy:.2}\" x2=\"{:.2}\" y2=\"{gy:.2}\" stroke=\"#888888\" stroke-dasharray=\"6 4\"/>",
                MARGIN,
                TS_W - MARGIN
            );
            text(&mut s, TS_W - MARGIN - 4.0, gy - 5.0, "end", "h = 0");
        }
    }
    for (i, pts) in series.iter().enumerate() {
        let mapped: Vec<(f64, f64)> = thin(pts).iter().map(|&(a, b)| (px(a), py(b))).collect();
        polyline(&mut s, &mapped, PALETTE[i % PALETTE.len()]);
    }
    text(&mut s, TS_W / 2.0, MARGIN - 18.0, "middle", title);
    text(&mut s, TS_W / 2.0, TS_H - 14.0, "middle", xlabel);
    text(&mut s, 16.0, MARGIN - 18.0, "start", ylabel);
    text(
        &mut s,
        MARGIN,
        TS_H - MARGIN + 16.0,
        "middle",
        &format!("{:.3}", x.min),
    );
    text(
        &mut s,
        TS_W - MARGIN,
        TS_H - MARGIN + 16.0,
        "middle",
        &format!("{:.3}", x.max),
    );
    text(
        &mut s,
        MARGIN - 6.0,
        TS_H - MARGIN,
        "end",
        &format!("{:.3}", y.min),
    );
    text(
        &mut s,
        MARGIN - 6.0,
        MARGIN + 4.0,
        "end",
        &format!("{:.3}", y.max),
    );
    s.push_str("</svg>\n");
    s
}

fn plane(title: &str, series: &[Vec<(f64, f64)>], guard_radius: f64) -> String {
    let pts = || series.iter().flatten();
    // Square data window: equal scales keep the guard circle round.
    let ax = Axis::of(pts().map(|p| p.0).chain([-guard_radius, guard_radius]));
    let ay = Axis::of(pts().map(|p| p.1).chain([-guard_radius, guard_radius]));
    let cx = 0.5 * (ax.min + ax.max);
    let cy = 0.5 * (ay.min + ay.max);
    let half = 0.525 * (ax.max - ax.min).max(ay.max - ay.min);
    let x = Axis {
        min: cx - half,
        max: cx + half,
    };
    let y = Axis {
        min: cy - half,
        max: cy + half,
    };
    let px = |v: f64| x.to_px(v, MARGIN, PLANE_SIDE - MARGIN);
    let py = |v: f64| y.to_px(v, PLANE_SIDE - MARGIN, MARGIN);
    let scale = (PLANE_SIDE - 2.0 * MARGIN) / (x.max - x.min);

    let mut s = String::new();
    open_svg(&mut s, PLANE_SIDE, PLANE_SIDE);
    let _ = writeln!(
        s,
        "<rect x=\"{m:.0}\" y=\"{m:.0}\" width=\"{w:.0}\" height=\"{w:.0}\" fill=\"none\" stroke=\"#cccccc\"/>",
        m = MARGIN,
        w = PLANE_SIDE - 2.0 * MARGIN
    );
    let _ = writeln!(
        s,
        "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"{:.2}\" fill=\"none\" stroke=\"#888888\" stroke-dasharray=\"6 4\"/>",
        px(0.0),
        py(0.0),
        guard_radius * scale
    );
    text(&mut s, px(0.0), py(guard_radius) - 6.0, "middle", "h = 0");
    for (i, pts) in series.iter().enumerate() {
        let mapped: Vec<(f64, f64)> = thin(pts).iter().map(|&(a, b)| (px(a), py(b))).collect();
        polyline(&mut s, &mapped, PALETTE[i % PALETTE.len()]);
    }
    text(&mut s, PLANE_SIDE / 2.0, MARGIN - 18.0, "middle", title);
    text(
        &mut s,
        MARGIN,
        PLANE_SIDE - MARGIN + 16.0,
        "middle",
        &format!("{:.3}", x.min),
    );
    text(
        &mut s,
        PLANE_SIDE - MARGIN,
        PLANE_SIDE - MARGIN + 16.0,
        "middle",
        &format!("{:.3}", x.max),
    );
    text(
        &mut s,
        MARGIN - 6.0,
        PLANE_SIDE - MARGIN,
        "end",
        &format!("{:.3}", y.min),
    );
    text(
        &mut s,
        MARGIN - 6.0,
        MARGIN + 4.0,
        "end",
        &format!("{:.3}", y.max),
    );
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use routhsim_core::io::{ReducedRow, TrajectoryRow};

    fn tiny_trajectory() -> TrajectoryTable {
        let rows = (0..400)
            .map(|i| {
                let t = i as f64 * 0.01;
                TrajectoryRow {
                    t,
                    arc: if i < 200 { 0 } else { 1 },
                    q: vec![0.5 + 0.1 * t, t],
                    v: vec![0.1, 1.0],
                }
            })
            .collect();
        TrajectoryTable { dim: 2, rows }
    }

    #[test]
    fn trajectory_svg_is_deterministic_and_draws_the_guard() {
        let table = tiny_trajectory();
        let a = trajectory_svg(&table, ChartKind::Polar, 1.0);
        let b = trajectory_svg(&table, ChartKind::Polar, 1.0);
        assert_eq!(a, b);
        assert!(a.starts_with("<svg "));
        assert!(a.trim_end().ends_with("</svg>"));
        assert!(a.contains("<circle"), "guard circle missing");
        assert_eq!(a.matches("<polyline").count(), 2, "one polyline per arc");
    }

    #[test]
    fn chart_flag_changes_the_projection() {
        let table = tiny_trajectory();
        let polar = trajectory_svg(&table, ChartKind::Polar, 1.0);
        let cart = trajectory_svg(&table, ChartKind::Cartesian, 1.0);
        assert_ne!(polar, cart);
    }

    #[test]
    fn reduced_svg_draws_guard_line_and_segments() {
        let rows = (0..300)
            .map(|i| {
                let t = i as f64 * 0.01;
                ReducedRow {
                    t,
                    segment: i / 100,
                    mu: 0.25,
                    x: vec![0.5 + 0.1 * t],
                    xdot: vec![0.1],
                    theta: t,
                }
            })
            .collect();
        let table = ReducedTable { dim: 1, rows };
        let svg = reduced_svg(&table, 1.0);
        assert!(svg.contains("stroke-dasharray"), "guard line missing");
        assert_eq!(svg.matches("<polyline").count(), 3);
        assert!(svg.contains("h = 0"));
    }

    #[test]
    fn long_series_are_thinned_but_keep_the_endpoint() {
        let pts: Vec<(f64, f64)> = (0..100_000).map(|i| (i as f64, 0.0)).collect();
        let out = thin(&pts);
        assert!(out.len() <= MAX_POINTS + 1);
        assert_eq!(*out.last().unwrap(), (99_999.0, 0.0));
    }
}
