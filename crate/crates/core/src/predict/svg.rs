//! Minimal standalone SVG charts.

use std::fmt::Write as _;
use std::path::Path;

use super::{ParameterSummary, StateBand};
use crate::error::{Error, Result};

const W: f64 = 640.0;
const H: f64 = 400.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

struct Frame {
    x: (f64, f64),
    y: (f64, f64),
    out: String,
}

impl Frame {
    fn new(title: &str, xlabel: &str, ylabel: &str, x: (f64, f64), y: (f64, f64)) -> Self {
        let pad = |(lo, hi): (f64, f64)| {
            if !(hi > lo) {
                let d = lo.abs().max(1.0) * 0.5;
                (lo - d, hi + d)
            } else {
                (lo, hi)
            }
        };
        let (x, y) = (pad(x), pad(y));
        let mut out = String::new();
        let _ = writeln!(
            out,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
        let _ = writeln!(out, r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#, W / 2.0, escape(title));
        let mut f = Self { x, y, out };
        f.axes(xlabel, ylabel);
        f
    }

    fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.x.0) / (self.x.1 - self.x.0) * (W - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        H - BOTTOM - (y - self.y.0) / (self.y.1 - self.y.0) * (H - TOP - BOTTOM)
    }

    fn axes(&mut self, xlabel: &str, ylabel: &str) {
        let (x0, x1, y0, y1) = (LEFT, W - RIGHT, TOP, H - BOTTOM);
        let _ = writeln!(self.out, r#"<rect x="{x0}" y="{y0}" width="{}" height="{}" fill="none" stroke="black"/>"#, x1 - x0, y1 - y0);
        for k in 0..=4 {
            let fx = self.x.0 + (self.x.1 - self.x.0) * k as f64 / 4.0;
            let fy = self.y.0 + (self.y.1 - self.y.0) * k as f64 / 4.0;
            let (px, py) = (self.px(fx), self.py(fy));
            let _ = writeln!(self.out, r#"<text x="{px:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, y1 + 16.0, tick(fx));
            let _ = writeln!(self.out, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#, x0 - 6.0, py + 4.0, tick(fy));
        }
        let _ = writeln!(self.out, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, (x0 + x1) / 2.0, H - 12.0, escape(xlabel));
        let _ = writeln!(
            self.out,
            r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">{}</text>"#,
            (y0 + y1) / 2.0,
            (y0 + y1) / 2.0,
            escape(ylabel)
        );
    }

    fn polyline(&mut self, xs: &[f64], ys: &[f64], color: &str, width: f64, dash: bool) {
        let pts: Vec<String> = xs
            .iter()
            .zip(ys)
            .filter(|(_, y)| y.is_finite())
            .map(|(&x, &y)| format!("{:.2},{:.2}", self.px(x), self.py(y)))
            .collect();
        let dash = if dash { r#" stroke-dasharray="5,4""# } else { "" };
        let _ = writeln!(
            self.out,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="{width}"{dash}/>"#,
            pts.join(" ")
        );
    }

    fn area(&mut self, xs: &[f64], lo: &[f64], hi: &[f64], color: &str, opacity: f64) {
        let mut pts: Vec<String> = xs.iter().zip(hi).map(|(&x, &y)| format!("{:.2},{:.2}", self.px(x), self.py(y))).collect();
        pts.extend(xs.iter().zip(lo).rev().map(|(&x, &y)| format!("{:.2},{:.2}", self.px(x), self.py(y))));
        let _ = writeln!(
            self.out,
            r#"<polygon points="{}" fill="{color}" fill-opacity="{opacity}" stroke="none"/>"#,
            pts.join(" ")
        );
    }

    fn dots(&mut self, xs: &[f64], ys: &[f64], color: &str) {
        for (&x, &y) in xs.iter().zip(ys) {
            let _ = writeln!(self.out, r#"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="{color}"/>"#, self.px(x), self.py(y));
        }
    }

    fn rect(&mut self, x0: f64, x1: f64, y0: f64, y1: f64, color: &str) {
        let (a, b) = (self.px(x0), self.px(x1));
        let (c, d) = (self.py(y1), self.py(y0));
        let _ = writeln!(
            self.out,
            r#"<rect x="{a:.2}" y="{c:.2}" width="{:.2}" height="{:.2}" fill="{color}"/>"#,
            (b - a).max(0.5),
            (d - c).max(0.0)
        );
    }

    fn vline(&mut self, x: f64, color: &str) {
        let px = self.px(x);
        let _ = writeln!(
            self.out,
            r#"<line x1="{px:.2}" x2="{px:.2}" y1="{TOP}" y2="{}" stroke="{color}" stroke-width="2"/>"#,
            H - BOTTOM
        );
    }

    fn hline(&mut self, y: f64, color: &str) {
        let py = self.py(y);
        let _ = writeln!(
            self.out,
            r#"<line x1="{LEFT}" x2="{}" y1="{py:.2}" y2="{py:.2}" stroke="{color}" stroke-dasharray="4,3"/>"#,
            W - RIGHT
        );
    }

    fn legend(&mut self, entries: &[(&str, &str)]) {
        for (i, (label, color)) in entries.iter().enumerate() {
            let y = TOP + 14.0 + 16.0 * i as f64;
            let x = W - RIGHT - 150.0;
            let _ = writeln!(self.out, r#"<rect x="{x}" y="{}" width="12" height="8" fill="{color}"/>"#, y - 8.0);
            let _ = writeln!(self.out, r#"<text x="{}" y="{y}">{}</text>"#, x + 18.0, escape(label));
        }
    }

    fn finish(mut self) -> String {
        self.out.push_str("</svg>\n");
        self.out
    }
}

fn tick(v: f64) -> String {
    if v != 0.0 && (v.abs() >= 1e4 || v.abs() < 1e-2) {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}").trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn range<'a>(vals: impl IntoIterator<Item = &'a f64>) -> (f64, f64) {
    vals.into_iter()
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
}

/// Nested quantile bands with the median, optional observations (dots) and
/// an optional reference curve (dashed).
pub fn band_chart(
    title: &str,
    times: &[f64],
    band: &StateBand,
    observations: Option<(&[f64], &[f64])>,
    reference: Option<(&[f64], &[f64])>,
) -> String {
    let mut ys: Vec<f64> = band.levels.iter().flat_map(|l| l.lower.iter().chain(&l.upper)).copied().collect();
    ys.extend(&band.median);
    if let Some((_, y)) = observations {
        ys.extend(y);
    }
    if let Some((_, y)) = reference {
        ys.extend(y);
    }
    let mut f = Frame::new(title, "t", &band.name, range(times), range(&ys));
    let mut levels: Vec<_> = band.levels.iter().collect();
    levels.sort_by(|a, b| b.level.total_cmp(&a.level));
    for l in levels {
        f.area(times, &l.lower, &l.upper, PALETTE[0], 0.15 + 0.25 * (1.0 - l.level));
    }
    f.polyline(times, &band.median, PALETTE[0], 2.0, false);
    if let Some((t, y)) = reference {
        f.polyline(t, y, "black", 1.5, true);
    }
    if let Some((t, y)) = observations {
        f.dots(t, y, PALETTE[1]);
    }
    f.finish()
}

/// Several curves on shared axes.
pub fn line_chart(title: &str, xlabel: &str, ylabel: &str, series: &[(&str, &[f64], &[f64])]) -> String {
    let xr = range(series.iter().flat_map(|s| s.1.iter()));
    let yr = range(series.iter().flat_map(|s| s.2.iter()));
    let mut f = Frame::new(title, xlabel, ylabel, xr, yr);
    let mut legend = Vec::new();
    for (i, (name, x, y)) in series.iter().enumerate() {
        let c = PALETTE[i % PALETTE.len()];
        f.polyline(x, y, c, 1.5, false);
        legend.push((*name, c));
    }
    if series.len() > 1 {
        f.legend(&legend);
    }
    f.finish()
}

/// Histogram of a marginal with the true value as a vertical line.
pub fn histogram_chart(summary: &ParameterSummary) -> String {
    let h = &summary.histogram;
    let top = h.counts.iter().copied().max().unwrap_or(1) as f64;
    let mut xr = (h.lower, h.upper);
    if let Some(t) = summary.truth {
        xr = (xr.0.min(t), xr.1.max(t));
    }
    let mut f = Frame::new(&summary.name, &summary.name, "count", xr, (0.0, top * 1.05));
    for (b, &c) in h.counts.iter().enumerate() {
        let (lo, hi) = h.bin_edges(b);
        f.rect(lo, hi, 0.0, c as f64, PALETTE[0]);
    }
    if let Some(t) = summary.truth {
        f.vline(t, PALETTE[1]);
    }
    f.finish()
}

/// Sorted ΔnegLL of multistart fits with the acceptance threshold.
pub fn waterfall_chart(points: &[(usize, f64)], threshold: f64) -> String {
    let xs: Vec<f64> = points.iter().map(|p| p.0 as f64).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1).collect();
    let mut yr = range(&ys);
    yr.1 = yr.1.max(threshold);
    let mut f = Frame::new("multistart waterfall", "rank", "negLL - best", range(&xs), yr);
    f.dots(&xs, &ys, PALETTE[0]);
    f.hline(threshold, PALETTE[1]);
    f.finish()
}

pub fn write_svg(path: &Path, svg: &str) -> Result<()> {
    std::fs::write(path, svg).map_err(|e| Error::io(path, e))
}
