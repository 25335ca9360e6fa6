//! Minimal static SVG rendering: line charts for curves and sweeps, and
//! histograms with an optional Gaussian overlay. Data-first output; the CSV
//! next to each plot is the authoritative artifact.

use crate::{Error, Result};

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 520.0;
const MARGIN_L: f64 = 72.0;
const MARGIN_R: f64 = 24.0;
const MARGIN_T: f64 = 44.0;
const MARGIN_B: f64 = 56.0;

const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
];

#[derive(Debug, Clone)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

impl Series {
    pub fn new(label: impl Into<String>, points: Vec<(f64, f64)>) -> Self {
        Series {
            label: label.into(),
            points,
        }
    }
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Tick positions at 1/2/5 steps covering [lo, hi].
fn ticks(lo: f64, hi: f64) -> Vec<f64> {
    let span = hi - lo;
    if span <= 0.0 {
        return vec![lo];
    }
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let norm = raw / mag;
    let step = if norm < 1.5 {
        mag
    } else if norm < 3.5 {
        2.0 * mag
    } else if norm < 7.5 {
        5.0 * mag
    } else {
        10.0 * mag
    };
    let mut t = (lo / step).ceil() * step;
    let mut out = Vec::new();
    while t <= hi + 1e-9 * span {
        out.push(if t.abs() < 1e-12 * step { 0.0 } else { t });
        t += step;
    }
    out
}

fn fmt_tick(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let a = v.abs();
    if a >= 1e5 || a < 1e-3 {
        format!("{v:.1e}")
    } else if a >= 10.0 {
        let s = format!("{v:.1}");
        s.strip_suffix(".0").map(str::to_owned).unwrap_or(s)
    } else {
        let s = format!("{v:.3}");
        let s = s.trim_end_matches('0').trim_end_matches('.');
        s.to_owned()
    }
}

struct Frame {
    x_lo: f64,
    x_hi: f64,
    y_lo: f64,
    y_hi: f64,
    log_x: bool,
    log_y: bool,
}

impl Frame {
    fn x(&self, v: f64) -> f64 {
        let v = if self.log_x { v.ln() } else { v };
        MARGIN_L + (v - self.x_lo) / (self.x_hi - self.x_lo) * (WIDTH - MARGIN_L - MARGIN_R)
    }

    fn y(&self, v: f64) -> f64 {
        let v = if self.log_y { v.ln() } else { v };
        HEIGHT - MARGIN_B - (v - self.y_lo) / (self.y_hi - self.y_lo) * (HEIGHT - MARGIN_T - MARGIN_B)
    }
}

fn pad_range(lo: f64, hi: f64) -> (f64, f64) {
    if lo == hi {
        let pad = lo.abs().max(1.0) * 0.05;
        (lo - pad, hi + pad)
    } else {
        let pad = (hi - lo) * 0.04;
        (lo - pad, hi + pad)
    }
}

fn axes_svg(out: &mut String, frame: &Frame, title: &str, x_label: &str, y_label: &str) {
    use std::fmt::Write;
    let x0 = MARGIN_L;
    let x1 = WIDTH - MARGIN_R;
    let y0 = HEIGHT - MARGIN_B;
    let y1 = MARGIN_T;
    let _ = write!(
        out,
        "<rect x='{x0}' y='{y1}' width='{}' height='{}' fill='none' stroke='#333'/>",
        x1 - x0,
        y0 - y1
    );
    let _ = write!(
        out,
        "<text x='{}' y='24' text-anchor='middle' font-size='15'>{}</text>",
        WIDTH / 2.0,
        xml_escape(title)
    );
    let _ = write!(
        out,
        "<text x='{}' y='{}' text-anchor='middle' font-size='12'>{}</text>",
        WIDTH / 2.0,
        HEIGHT - 12.0,
        xml_escape(x_label)
    );
    let _ = write!(
        out,
        "<text x='16' y='{}' text-anchor='middle' font-size='12' transform='rotate(-90 16 {})'>{}</text>",
        HEIGHT / 2.0,
        HEIGHT / 2.0,
        xml_escape(y_label)
    );
    for t in ticks(frame.x_lo, frame.x_hi) {
        let raw = if frame.log_x { t.exp() } else { t };
        let px = MARGIN_L
            + (t - frame.x_lo) / (frame.x_hi - frame.x_lo) * (WIDTH - MARGIN_L - MARGIN_R);
        let _ = write!(
            out,
            "<line x1='{px}' y1='{y0}' x2='{px}' y2='{}' stroke='#333'/>\
             <text x='{px}' y='{}' text-anchor='middle' font-size='11'>{}</text>",
            y0 + 5.0,
            y0 + 18.0,
            fmt_tick(raw)
        );
    }
    for t in ticks(frame.y_lo, frame.y_hi) {
        let raw = if frame.log_y { t.exp() } else { t };
        let py = HEIGHT
            - MARGIN_B
            - (t - frame.y_lo) / (frame.y_hi - frame.y_lo) * (HEIGHT - MARGIN_T - MARGIN_B);
        let _ = write!(
            out,
            "<line x1='{}' y1='{py}' x2='{x0}' y2='{py}' stroke='#333'/>\
             <text x='{}' y='{}' text-anchor='end' font-size='11'>{}</text>",
            x0 - 5.0,
            x0 - 8.0,
            py + 4.0,
            fmt_tick(raw)
        );
    }
}

/// Multi-series line chart; optional log axes require strictly positive
/// coordinates on that axis.
pub fn line_chart(
    title: &str,
    x_label: &str,
    y_label: &str,
    series: &[Series],
    log_x: bool,
    log_y: bool,
) -> Result<String> {
    use std::fmt::Write;
    if series.is_empty() || series.iter().any(|s| s.points.is_empty()) {
        return Err(Error::Parameter("empty series".into()));
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for s in series {
        for &(x, y) in &s.points {
            if !x.is_finite() || !y.is_finite() {
                return Err(Error::Parameter(format!(
                    "non-finite point ({x}, {y}) in series {}",
                    s.label
                )));
            }
            if (log_x && x <= 0.0) || (log_y && y <= 0.0) {
                return Err(Error::Parameter(
                    "log axis needs strictly positive coordinates".into(),
                ));
            }
            xs.push(if log_x { x.ln() } else { x });
            ys.push(if log_y { y.ln() } else { y });
        }
    }
    let lo = |v: &[f64]| v.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = |v: &[f64]| v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let (x_lo, x_hi) = pad_range(lo(&xs), hi(&xs));
    let (y_lo, y_hi) = pad_range(lo(&ys), hi(&ys));
    let frame = Frame {
        x_lo,
        x_hi,
        y_lo,
        y_hi,
        log_x,
        log_y,
    };
    let mut out = format!(
        "<svg xmlns='http://www.w3.org/2000/svg' width='{WIDTH}' height='{HEIGHT}' \
         viewBox='0 0 {WIDTH} {HEIGHT}' font-family='sans-serif'>\
         <rect width='100%' height='100%' fill='white'/>"
    );
    axes_svg(&mut out, &frame, title, x_label, y_label);
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = s
            .points
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", frame.x(x), frame.y(y)))
            .collect();
        let _ = write!(
            out,
            "<polyline fill='none' stroke='{color}' stroke-width='1.8' points='{}'/>",
            pts.join(" ")
        );
        for &(x, y) in &s.points {
            let _ = write!(
                out,
                "<circle cx='{:.2}' cy='{:.2}' r='2.6' fill='{color}'/>",
                frame.x(x),
                frame.y(y)
            );
        }
        let ly = MARGIN_T + 16.0 + 18.0 * i as f64;
        let _ = write!(
            out,
            "<line x1='{}' y1='{ly}' x2='{}' y2='{ly}' stroke='{color}' stroke-width='3'/>\
             <text x='{}' y='{}' font-size='12'>{}</text>",
            WIDTH - MARGIN_R - 150.0,
            WIDTH - MARGIN_R - 126.0,
            WIDTH - MARGIN_R - 120.0,
            ly + 4.0,
            xml_escape(&s.label)
        );
    }
    out.push_str("</svg>");
    Ok(out)
}

/// Histogram of one batch with an optional N(mean, variance) density
/// overlay scaled to the bin counts.
pub fn histogram(
    title: &str,
    x_label: &str,
    values: &[f64],
    bins: usize,
    overlay: Option<(f64, f64)>,
) -> Result<String> {
    use std::fmt::Write;
    if values.len() < 2 || bins < 2 {
        return Err(Error::Parameter(
            "histogram needs at least 2 values and 2 bins".into(),
        ));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Parameter("non-finite value".into()));
    }
    if let Some((_, var)) = overlay {
        if !(var > 0.0) {
            return Err(Error::Parameter("overlay variance must be > 0".into()));
        }
    }
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if lo == hi {
        return Err(Error::Degenerate("constant batch".into()));
    }
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0u64; bins];
    for &v in values {
        let b = (((v - lo) / width) as usize).min(bins - 1);
        counts[b] += 1;
    }
    let peak = *counts.iter().max().unwrap() as f64;
    let (x_lo, x_hi) = pad_range(lo, hi);
    let (y_lo, y_hi) = (0.0, peak * 1.08);
    let frame = Frame {
        x_lo,
        x_hi,
        y_lo,
        y_hi,
        log_x: false,
        log_y: false,
    };
    let mut out = format!(
        "<svg xmlns='http://www.w3.org/2000/svg' width='{WIDTH}' height='{HEIGHT}' \
         viewBox='0 0 {WIDTH} {HEIGHT}' font-family='sans-serif'>\
         <rect width='100%' height='100%' fill='white'/>"
    );
    axes_svg(&mut out, &frame, title, x_label, "count");
    let base = frame.y(0.0);
    for (b, &c) in counts.iter().enumerate() {
        if c == 0 {
            continue;
        }
        let xl = frame.x(lo + b as f64 * width);
        let xr = frame.x(lo + (b as f64 + 1.0) * width);
        let yt = frame.y(c as f64);
        let _ = write!(
            out,
            "<rect x='{:.2}' y='{:.2}' width='{:.2}' height='{:.2}' \
             fill='#1f77b4' fill-opacity='0.55' stroke='#1f77b4'/>",
            xl,
            yt,
            (xr - xl).max(0.5),
            (base - yt).max(0.0)
        );
    }
    if let Some((mean, var)) = overlay {
        let sd = var.sqrt();
        let norm = values.len() as f64 * width / (sd * (2.0 * std::f64::consts::PI).sqrt());
        let steps = 220;
        let pts: Vec<String> = (0..=steps)
            .map(|i| {
                let x = lo + (hi - lo) * i as f64 / steps as f64;
                let z = (x - mean) / sd;
                let y = norm * (-0.5 * z * z).exp();
                format!("{:.2},{:.2}", frame.x(x), frame.y(y.min(y_hi)))
            })
            .collect();
        let _ = write!(
            out,
            "<polyline fill='none' stroke='#d62728' stroke-width='2' points='{}'/>",
            pts.join(" ")
        );
    }
    out.push_str("</svg>");
    Ok(out)
}
