//! Static SVG plots: error curves over time and a final-state map.

use std::fmt::Write as _;

use crate::domain::{GridSpec, Point, ScalarField};
use crate::error::Result;

use super::metrics::MetricsSeries;

const W: f64 = 760.0;
const H: f64 = 420.0;
const MARGIN: (f64, f64, f64, f64) = (70.0, 20.0, 30.0, 50.0); // left, right, top, bottom
const PALETTE: [&str; 6] = ["#444444", "#d95f02", "#7570b3", "#1b9e77", "#e7298a", "#66a61e"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    OilError,
    CurrentError,
}

impl Metric {
    fn value(self, r: &super::metrics::MetricRow) -> f64 {
        match self {
            Metric::OilError => r.oil_error_m2 / 1.0e6,
            Metric::CurrentError => r.rms_current_mps,
        }
    }

    fn label(self) -> &'static str {
        match self {
            Metric::OilError => "oil presence error (km²)",
            Metric::CurrentError => "RMS current error where oil (m/s)",
        }
    }
}

fn nice_step(span: f64) -> f64 {
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    [1.0, 2.0, 5.0, 10.0].iter().map(|m| m * mag).find(|s| *s >= raw).unwrap_or(10.0 * mag)
}

fn header(out: &mut String, w: f64, h: f64) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
}

/// Error against time in hours for every series, with the sensing window shaded.
pub fn error_curves_svg(series: &[MetricsSeries], metric: Metric, active: (f64, f64)) -> String {
    let (l, r, t, b) = MARGIN;
    let pts = |s: &MetricsSeries| -> Vec<(f64, f64)> {
        s.rows.iter().map(|row| (row.t / 3600.0, metric.value(row))).filter(|p| p.1.is_finite()).collect()
    };
    let all: Vec<(f64, f64)> = series.iter().flat_map(pts).collect();
    let t_max = all.iter().map(|p| p.0).fold(active.1 / 3600.0, f64::max).max(1e-9);
    let y_max = all.iter().map(|p| p.1).fold(0.0, f64::max);
    let y_max = if y_max > 0.0 { y_max * 1.05 } else { 1.0 };
    let sx = |x: f64| l + (W - l - r) * x / t_max;
    let sy = |y: f64| H - b - (H - t - b) * y / y_max;

    let mut out = String::new();
    header(&mut out, W, H);
    let (a0, a1) = (sx(active.0 / 3600.0), sx(active.1 / 3600.0));
    let _ = writeln!(out, r##"<rect x="{a0:.1}" y="{t}" width="{:.1}" height="{:.1}" fill="#eef3fb"/>"##, a1 - a0, H - t - b);
    let _ = writeln!(out, r##"<text x="{:.1}" y="{:.1}" fill="#6a7fa8">sensors active</text>"##, a0 + 4.0, t + 14.0);
    // axes and ticks
    let _ = writeln!(out, r#"<path d="M{l} {t} V{:.1} H{:.1}" stroke="black" fill="none"/>"#, H - b, W - r);
    let xs = nice_step(t_max);
    let mut x = 0.0;
    while x <= t_max + 1e-9 {
        let _ = writeln!(out, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{x}</text>"#, sx(x), H - b + 16.0);
        x += xs;
    }
    let ys = nice_step(y_max);
    let mut y = 0.0;
    while y <= y_max + 1e-12 {
        let _ = writeln!(
            out,
            r##"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text><path d="M{l} {:.1} H{:.1}" stroke="#dddddd"/>"##,
            l - 6.0,
            sy(y) + 4.0,
            format_tick(y),
            sy(y),
            W - r
        );
        y += ys;
    }
    let _ = writeln!(out, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">time since spill (h)</text>"#, (l + W - r) / 2.0, H - 12.0);
    let _ = writeln!(
        out,
        r#"<text transform="translate(16 {:.1}) rotate(-90)" text-anchor="middle">{}</text>"#,
        (t + H - b) / 2.0,
        metric.label()
    );
    for (k, s) in series.iter().enumerate() {
        let colour = PALETTE[k % PALETTE.len()];
        let mut d = String::new();
        let mut pen = false;
        // NaN rows break the line
        for row in &s.rows {
            let v = metric.value(row);
            if v.is_finite() {
                let _ = write!(d, "{}{:.1} {:.1} ", if pen { "L" } else { "M" }, sx(row.t / 3600.0), sy(v));
                pen = true;
            } else {
                pen = false;
            }
        }
        let _ = writeln!(out, r#"<path d="{}" stroke="{colour}" stroke-width="1.5" fill="none"/>"#, d.trim_end());
        let ly = t + 14.0 + 16.0 * k as f64;
        let lx = W - r - 170.0;
        let _ = writeln!(
            out,
            r#"<path d="M{lx:.1} {:.1} h20" stroke="{colour}" stroke-width="2"/><text x="{:.1}" y="{ly:.1}">{}</text>"#,
            ly - 4.0,
            lx + 26.0,
            s.strategy
        );
    }
    out.push_str("</svg>\n");
    out
}

fn format_tick(y: f64) -> String {
    let s = format!("{y:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s.is_empty() {
        "0".into()
    } else {
        s.into()
    }
}

/// Oil map at the final time: cells where only the truth has oil, only the
/// estimate has oil, or both, plus the sensor tracks.
pub fn final_map_svg(
    grid: &GridSpec,
    truth: &ScalarField,
    estimate: &ScalarField,
    threshold: f64,
    tracks: &[Vec<Point>],
    title: &str,
) -> Result<String> {
    truth.check_grid(grid)?;
    estimate.check_grid(grid)?;
    let (lo, hi) = grid.bounds();
    let (span_x, span_y) = (hi.x - lo.x, hi.y - lo.y);
    let size = 560.0;
    let scale = size / span_x.max(span_y);
    let (w, h) = (span_x * scale + 40.0, span_y * scale + 70.0);
    let px = |p: Point| (20.0 + (p.x - lo.x) * scale, 50.0 + (hi.y - p.y) * scale);
    let mut out = String::new();
    header(&mut out, w, h);
    let _ = writeln!(out, r#"<text x="20" y="20" font-size="14">{title}</text>"#);
    let _ = writeln!(
        out,
        r##"<text x="20" y="38"><tspan fill="#d95f02">■ truth only</tspan>  <tspan fill="#1f78b4">■ estimate only</tspan>  <tspan fill="#33a02c">■ both</tspan>  <tspan fill="#444444">▬ sensors</tspan></text>"##
    );
    let (cw, ch) = (grid.dx() * scale, grid.dy() * scale);
    for c in 0..grid.cell_count() {
        let colour = if grid.is_land(c) {
            "#c8b99a"
        } else {
            match (truth.values()[c] >= threshold, estimate.values()[c] >= threshold) {
                (true, true) => "#33a02c",
                (true, false) => "#d95f02",
                (false, true) => "#1f78b4",
                (false, false) => continue,
            }
        };
        let centre = grid.center_of(c);
        let (x, y) = px(Point::new(centre.x - grid.dx() / 2.0, centre.y + grid.dy() / 2.0));
        let _ = writeln!(out, r#"<rect x="{x:.2}" y="{y:.2}" width="{cw:.2}" height="{ch:.2}" fill="{colour}"/>"#);
    }
    for track in tracks.iter().filter(|t| t.len() > 1) {
        let mut d = String::new();
        for (k, p) in track.iter().enumerate() {
            let (x, y) = px(*p);
            let _ = write!(d, "{}{x:.1} {y:.1} ", if k == 0 { "M" } else { "L" });
        }
        let _ = writeln!(out, r##"<path d="{}" stroke="#444444" stroke-width="0.8" fill="none"/>"##, d.trim_end());
    }
    let (x0, y0) = px(Point::new(lo.x, hi.y));
    let _ = writeln!(out, r#"<rect x="{x0:.1}" y="{y0:.1}" width="{:.1}" height="{:.1}" fill="none" stroke="black"/>"#, span_x * scale, span_y * scale);
    out.push_str("</svg>\n");
    Ok(out)
}
