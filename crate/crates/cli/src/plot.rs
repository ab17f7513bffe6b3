//! Minimal SVG charts for evaluation summaries.

use std::fmt::Write as _;

use crate::commands::SummaryRow;

const W: f64 = 720.0;
const H: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 230.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 50.0;

const PALETTE: [&str; 12] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf",
    "#bcbd22", "#7f7f7f", "#393b79", "#ad494a",
];

fn label(r: &SummaryRow) -> String {
    let solver = r.solver.split('_').next().unwrap_or(&r.solver);
    if r.method == "biflow" {
        format!("{} eps={} {} {solver}", r.method, r.epsilon, r.direction)
    } else {
        format!("{} {} {solver}", r.method, r.direction)
    }
}

fn tick_label(v: f64) -> String {
    if v != 0.0 && (v.abs() >= 1e4 || v.abs() < 1e-2) {
        format!("{v:.1e}")
    } else {
        format!("{v:.3}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

/// Linear or log10 axis mapping from data to pixels.
struct Axis {
    lo: f64,
    hi: f64,
    log: bool,
    p0: f64,
    p1: f64,
}

impl Axis {
    fn new(values: impl Iterator<Item = f64>, log: bool, p0: f64, p1: f64) -> Axis {
        let tr = |v: f64| if log { v.log10() } else { v };
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values.filter(|v| v.is_finite() && (!log || *v > 0.0)) {
            lo = lo.min(tr(v));
            hi = hi.max(tr(v));
        }
        if !lo.is_finite() {
            (lo, hi) = (0.0, 1.0);
        }
        if hi - lo < 1e-12 {
            lo -= 0.5;
            hi += 0.5;
        }
        let pad = 0.05 * (hi - lo);
        Axis {
            lo: lo - pad,
            hi: hi + pad,
            log,
            p0,
            p1,
        }
    }

    fn px(&self, v: f64) -> f64 {
        let v = if self.log { v.max(1e-300).log10() } else { v };
        self.p0 + (v - self.lo) / (self.hi - self.lo) * (self.p1 - self.p0)
    }

    fn ticks(&self) -> Vec<(f64, String)> {
        if self.log {
            let (a, b) = (self.lo.ceil() as i32, self.hi.floor() as i32);
            let every = ((b - a) / 6 + 1).max(1) as usize;
            let mut t: Vec<_> = (a..=b)
                .step_by(every)
                .map(|e| (10f64.powi(e), format!("1e{e}")))
                .collect();
            if t.is_empty() {
                let mid = 10f64.powf(0.5 * (self.lo + self.hi));
                t.push((mid, tick_label(mid)));
            }
            t
        } else {
            (0..=4)
                .map(|i| {
                    let v = self.lo + (self.hi - self.lo) * i as f64 / 4.0;
                    (v, tick_label(v))
                })
                .collect()
        }
    }
}

fn frame(svg: &mut String, title: &str, xlab: &str, ylab: &str, x: &Axis, y: &Axis) {
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(svg, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="18" text-anchor="middle" font-size="13">{}</text>"#,
        (LEFT + W - RIGHT) / 2.0,
        escape(title)
    );
    let (x0, x1, y0, y1) = (LEFT, W - RIGHT, H - BOTTOM, TOP);
    let _ = writeln!(
        svg,
        r#"<path d="M{x0} {y1} L{x0} {y0} L{x1} {y0}" stroke="black" fill="none"/>"#
    );
    for (v, s) in x.ticks() {
        let p = x.px(v);
        let _ = writeln!(
            svg,
            r#"<line x1="{p:.1}" y1="{y0}" x2="{p:.1}" y2="{}" stroke="black"/><text x="{p:.1}" y="{}" text-anchor="middle">{s}</text>"#,
            y0 + 4.0,
            y0 + 16.0
        );
    }
    for (v, s) in y.ticks() {
        let p = y.px(v);
        let _ = writeln!(
            svg,
            r#"<line x1="{}" y1="{p:.1}" x2="{x0}" y2="{p:.1}" stroke="black"/><text x="{}" y="{:.1}" text-anchor="end">{s}</text>"#,
            x0 - 4.0,
            x0 - 6.0,
            p + 4.0
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        (x0 + x1) / 2.0,
        H - 12.0,
        escape(xlab)
    );
    let _ = writeln!(
        svg,
        r#"<text x="16" y="{0}" text-anchor="middle" transform="rotate(-90 16 {0})">{1}</text>"#,
        (y0 + y1) / 2.0,
        escape(ylab)
    );
}

fn legend(svg: &mut String, i: usize, color: &str, text: &str) {
    let y = TOP + 14.0 * i as f64 + 6.0;
    let x = W - RIGHT + 12.0;
    let _ = writeln!(
        svg,
        r#"<rect x="{x}" y="{}" width="10" height="10" fill="{color}"/><text x="{}" y="{}">{}</text>"#,
        y - 8.0,
        x + 14.0,
        y + 1.0,
        escape(text)
    );
}

/// Steps per frame against mean distance (log scale), one marker per group.
/// Bi-flow groups of the same direction are joined in noise-level order.
pub fn scatter_svg(rows: &[SummaryRow]) -> String {
    let x = Axis::new(rows.iter().map(|r| r.mean_steps), false, LEFT, W - RIGHT);
    let y = Axis::new(rows.iter().map(|r| r.mean_distance), true, H - BOTTOM, TOP);
    let mut svg = String::new();
    frame(
        &mut svg,
        "Cost against quality",
        "solver steps per frame",
        "mean windowed distance (log)",
        &x,
        &y,
    );
    let mut lines: Vec<(&str, &str)> = rows
        .iter()
        .map(|r| (r.direction.as_str(), r.solver.as_str()))
        .collect();
    lines.sort_unstable();
    lines.dedup();
    for (dir, solver) in lines {
        let mut pts: Vec<&SummaryRow> = rows
            .iter()
            .filter(|r| r.method == "biflow" && r.direction == dir && r.solver == solver)
            .filter(|r| r.mean_steps.is_finite() && r.mean_distance > 0.0)
            .collect();
        pts.sort_by(|a, b| a.epsilon.total_cmp(&b.epsilon));
        if pts.len() >= 2 {
            let d: Vec<String> = pts
                .iter()
                .map(|r| format!("{:.1},{:.1}", x.px(r.mean_steps), y.px(r.mean_distance)))
                .collect();
            let _ = writeln!(
                svg,
                r##"<polyline points="{}" fill="none" stroke="#888" stroke-dasharray="4 3"/>"##,
                d.join(" ")
            );
        }
    }
    for (i, r) in rows.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        if r.mean_steps.is_finite() && r.mean_distance > 0.0 {
            let _ = writeln!(
                svg,
                r#"<circle cx="{:.1}" cy="{:.1}" r="{}" fill="{color}"/>"#,
                x.px(r.mean_steps),
                y.px(r.mean_distance),
                if r.best { 6 } else { 4 }
            );
        }
        legend(&mut svg, i, color, &label(r));
    }
    svg.push_str("</svg>\n");
    svg
}

/// Fitted drift lines: distance against window start for every group.
pub fn trend_svg(rows: &[SummaryRow]) -> String {
    let ends = |r: &SummaryRow| {
        let x1 = r.last_window_start as f64;
        (r.drift_intercept, r.drift_intercept + r.drift_slope * x1)
    };
    let x = Axis::new(
        rows.iter().map(|r| r.last_window_start as f64).chain([0.0]),
        false,
        LEFT,
        W - RIGHT,
    );
    // Exploding groups would flatten everything else, so the axis stops at
    // ten times the lower-quartile mean distance and longer lines are clipped.
    let mut means: Vec<f64> = rows
        .iter()
        .map(|r| r.mean_distance)
        .filter(|v| v.is_finite())
        .collect();
    means.sort_by(f64::total_cmp);
    let cap = means
        .get(means.len() / 4)
        .map_or(f64::INFINITY, |m| 10.0 * m.abs());
    let y = Axis::new(
        rows.iter()
            .flat_map(|r| {
                let (a, b) = ends(r);
                [a, b]
            })
            .filter(|v| v.abs() <= cap),
        false,
        H - BOTTOM,
        TOP,
    );
    let mut svg = String::new();
    frame(
        &mut svg,
        "Drift over the rollout",
        "window start (frame)",
        "fitted distance",
        &x,
        &y,
    );
    let _ = writeln!(
        svg,
        r#"<clipPath id="area"><rect x="{LEFT}" y="{TOP}" width="{}" height="{}"/></clipPath>"#,
        W - RIGHT - LEFT,
        H - BOTTOM - TOP
    );
    for (i, r) in rows.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let (a, b) = ends(r);
        if a.is_finite() && b.is_finite() {
            let _ = writeln!(
                svg,
                r#"<line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="{color}" stroke-width="2" clip-path="url(#area)"/>"#,
                x.px(0.0),
                y.px(a),
                x.px(r.last_window_start as f64),
                y.px(b)
            );
        }
        legend(&mut svg, i, color, &label(r));
    }
    svg.push_str("</svg>\n");
    svg
}
