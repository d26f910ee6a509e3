//! Minimal SVG line plots with linear or base-10 log axes.

use std::fmt::Write;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scale {
    Linear,
    Log,
}

#[derive(Debug, Clone)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone)]
pub struct Panel {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub x_scale: Scale,
    pub y_scale: Scale,
    pub series: Vec<Series>,
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];
const W: f64 = 480.0;
const H: f64 = 360.0;
const MARGIN: (f64, f64, f64, f64) = (70.0, 20.0, 40.0, 50.0); // left, right, top, bottom

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn transform(v: f64, scale: Scale) -> Option<f64> {
    match scale {
        Scale::Linear => v.is_finite().then_some(v),
        Scale::Log => (v > 0.0 && v.is_finite()).then(|| v.log10()),
    }
}

fn range(vals: impl Iterator<Item = f64>, scale: Scale) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in vals {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if scale == Scale::Log {
        (lo, hi) = (lo.floor(), hi.ceil());
    }
    if hi - lo < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

fn ticks(lo: f64, hi: f64, scale: Scale) -> Vec<(f64, String)> {
    match scale {
        Scale::Log => {
            let step = ((hi - lo) / 6.0).ceil().max(1.0);
            let mut out = Vec::new();
            let mut t = lo.ceil();
            while t <= hi + 1e-9 {
                out.push((t, format!("1e{}", t as i64)));
                t += step;
            }
            out
        }
        Scale::Linear => (0..=5)
            .map(|i| {
                let t = lo + (hi - lo) * i as f64 / 5.0;
                (t, format!("{t:.3}"))
            })
            .collect(),
    }
}

fn render_panel(out: &mut String, p: &Panel, ox: f64) {
    let (l, r, t, b) = MARGIN;
    let (pw, ph) = (W - l - r, H - t - b);
    let pts: Vec<Vec<(f64, f64)>> = p
        .series
        .iter()
        .map(|s| {
            s.points
                .iter()
                .filter_map(|&(x, y)| Some((transform(x, p.x_scale)?, transform(y, p.y_scale)?)))
                .collect()
        })
        .collect();
    let (x0, x1) = range(pts.iter().flatten().map(|q| q.0), p.x_scale);
    let (y0, y1) = range(pts.iter().flatten().map(|q| q.1), p.y_scale);
    let sx = |x: f64| ox + l + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| t + ph - (y - y0) / (y1 - y0) * ph;
    let _ = writeln!(
        out,
        r##"<rect x="{:.1}" y="{t}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>"##,
        ox + l
    );
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-size="14">{}</text>"#,
        ox + l + pw / 2.0,
        t - 14.0,
        escape(&p.title)
    );
    for (v, label) in ticks(x0, x1, p.x_scale) {
        let _ = writeln!(
            out,
            r##"<line x1="{x:.1}" y1="{y:.1}" x2="{x:.1}" y2="{:.1}" stroke="#444"/><text x="{x:.1}" y="{:.1}" text-anchor="middle" font-size="10">{label}</text>"##,
            t + ph + 4.0,
            t + ph + 16.0,
            x = sx(v),
            y = t + ph,
        );
    }
    for (v, label) in ticks(y0, y1, p.y_scale) {
        let _ = writeln!(
            out,
            r##"<line x1="{:.1}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#444"/><text x="{:.1}" y="{:.1}" text-anchor="end" font-size="10">{label}</text>"##,
            ox + l - 4.0,
            ox + l,
            ox + l - 6.0,
            sy(v) + 3.0,
            y = sy(v),
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-size="12">{}</text>"#,
        ox + l + pw / 2.0,
        H - 10.0,
        escape(&p.x_label)
    );
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-size="12" transform="rotate(-90 {:.1} {:.1})">{}</text>"#,
        ox + 16.0,
        t + ph / 2.0,
        ox + 16.0,
        t + ph / 2.0,
        escape(&p.y_label)
    );
    for (i, (s, q)) in p.series.iter().zip(&pts).enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        if !q.is_empty() {
            let coords: Vec<String> = q.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
            let _ = writeln!(
                out,
                r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
                coords.join(" ")
            );
        }
        let ly = t + 14.0 + 14.0 * i as f64;
        let _ = writeln!(
            out,
            r#"<line x1="{:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="2"/><text x="{:.1}" y="{:.1}" font-size="10">{}</text>"#,
            ox + W - r - 110.0,
            ox + W - r - 90.0,
            ox + W - r - 85.0,
            ly + 3.0,
            escape(&s.label)
        );
    }
}

/// Panels side by side in one document. Non-positive values are dropped on
/// log axes.
pub fn render(panels: &[Panel]) -> String {
    let width = W * panels.len().max(1) as f64;
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<?xml version="1.0" encoding="UTF-8"?>
<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{H}" viewBox="0 0 {width} {H}" font-family="sans-serif">"#
    );
    let _ = writeln!(out, r#"<rect width="{width}" height="{H}" fill="white"/>"#);
    for (i, p) in panels.iter().enumerate() {
        render_panel(&mut out, p, W * i as f64);
    }
    out.push_str("</svg>\n");
    out
}
