//! Minimal deterministic SVG charts.

use std::fmt::Write as _;

const W: f64 = 720.0;
const H: f64 = 440.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;
const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

/// A mean curve with a ±1 standard-error band.
#[derive(Clone, Debug)]
pub struct Band {
    pub label: String,
    pub x: Vec<f64>,
    pub mean: Vec<f64>,
    pub se: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct Bar {
    pub label: String,
    pub mean: f64,
    pub se: f64,
}

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn new(x0: f64, x1: f64, y0: f64, y1: f64) -> Self {
        let pad = |a: f64, b: f64| if (b - a).abs() < 1e-12 { (a - 1.0, b + 1.0) } else { (a, b) };
        let (x0, x1) = pad(x0, x1);
        let (y0, y1) = pad(y0, y1);
        let m = 0.05 * (y1 - y0);
        Self { x0, x1, y0: y0 - m, y1: y1 + m }
    }

    fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.x0) / (self.x1 - self.x0) * (W - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        H - BOTTOM - (y - self.y0) / (self.y1 - self.y0) * (H - TOP - BOTTOM)
    }
}

fn header(out: &mut String, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#, W / 2.0, escape(title));
}

fn axes(out: &mut String, f: &Frame, x_label: &str, y_label: &str, x_ticks: bool) {
    let (l, r, t, b) = (LEFT, W - RIGHT, TOP, H - BOTTOM);
    let _ = writeln!(out, r#"<path d="M{l} {t} L{l} {b} L{r} {b}" stroke="black" fill="none"/>"#);
    for k in 0..=4 {
        let y = f.y0 + (f.y1 - f.y0) * k as f64 / 4.0;
        let py = f.py(y);
        let _ = writeln!(out, r##"<line x1="{l}" y1="{py:.2}" x2="{r}" y2="{py:.2}" stroke="#dddddd"/>"##);
        let _ = writeln!(out, r#"<text x="{}" y="{:.2}" text-anchor="end">{:.2}</text>"#, l - 6.0, py + 4.0, y);
        if x_ticks {
            let x = f.x0 + (f.x1 - f.x0) * k as f64 / 4.0;
            let _ = writeln!(out, r#"<text x="{:.2}" y="{}" text-anchor="middle">{}</text>"#, f.px(x), b + 16.0, trim(x));
        }
    }
    let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, (l + r) / 2.0, H - 10.0, escape(x_label));
    let _ = writeln!(
        out,
        r#"<text x="16" y="{0}" text-anchor="middle" transform="rotate(-90 16 {0})">{1}</text>"#,
        (t + b) / 2.0,
        escape(y_label)
    );
}

fn trim(x: f64) -> String {
    if x.abs() >= 1000.0 || x.fract() == 0.0 {
        format!("{x:.0}")
    } else {
        format!("{x:.2}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn legend(out: &mut String, labels: &[&str]) {
    for (i, label) in labels.iter().enumerate() {
        let y = TOP + 10.0 + 20.0 * i as f64;
        let x = W - RIGHT + 15.0;
        let c = PALETTE[i % PALETTE.len()];
        let _ = writeln!(out, r#"<rect x="{x}" y="{}" width="14" height="10" fill="{c}"/>"#, y - 9.0);
        let _ = writeln!(out, r#"<text x="{}" y="{y}">{}</text>"#, x + 20.0, escape(label));
    }
}

/// Learning curves: mean line with a shaded ±1 standard-error band.
pub fn curves_svg(title: &str, x_label: &str, y_label: &str, bands: &[Band]) -> String {
    let xs = bands.iter().flat_map(|b| b.x.iter().copied());
    let (x0, x1) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
    let lows = bands.iter().flat_map(|b| b.mean.iter().zip(&b.se).map(|(m, s)| m - s));
    let highs = bands.iter().flat_map(|b| b.mean.iter().zip(&b.se).map(|(m, s)| m + s));
    let y0 = lows.fold(f64::INFINITY, f64::min);
    let y1 = highs.fold(f64::NEG_INFINITY, f64::max);
    let f = if x0.is_finite() && y0.is_finite() { Frame::new(x0, x1, y0, y1) } else { Frame::new(0.0, 1.0, 0.0, 1.0) };

    let mut out = String::new();
    header(&mut out, title);
    axes(&mut out, &f, x_label, y_label, true);
    for (i, b) in bands.iter().enumerate() {
        let c = PALETTE[i % PALETTE.len()];
        if b.x.is_empty() {
            continue;
        }
        let mut area = String::new();
        for (k, (&x, (&m, &s))) in b.x.iter().zip(b.mean.iter().zip(&b.se)).enumerate() {
            let _ = write!(area, "{}{:.2} {:.2} ", if k == 0 { "M" } else { "L" }, f.px(x), f.py(m + s));
        }
        for (&x, (&m, &s)) in b.x.iter().zip(b.mean.iter().zip(&b.se)).rev() {
            let _ = write!(area, "L{:.2} {:.2} ", f.px(x), f.py(m - s));
        }
        let _ = writeln!(out, r#"<path d="{}Z" fill="{c}" fill-opacity="0.2" stroke="none"/>"#, area);
        let mut line = String::new();
        for (k, (&x, &m)) in b.x.iter().zip(&b.mean).enumerate() {
            let _ = write!(line, "{}{:.2} {:.2} ", if k == 0 { "M" } else { "L" }, f.px(x), f.py(m));
        }
        let _ = writeln!(out, r#"<path d="{}" fill="none" stroke="{c}" stroke-width="1.5"/>"#, line.trim_end());
    }
    legend(&mut out, &bands.iter().map(|b| b.label.as_str()).collect::<Vec<_>>());
    out.push_str("</svg>\n");
    out
}

/// Bars with ±1 standard-error whiskers.
pub fn bars_svg(title: &str, y_label: &str, bars: &[Bar]) -> String {
    let y0 = bars.iter().map(|b| (b.mean - b.se).min(0.0)).fold(f64::INFINITY, f64::min);
    let y1 = bars.iter().map(|b| (b.mean + b.se).max(0.0)).fold(f64::NEG_INFINITY, f64::max);
    let f = if y0.is_finite() { Frame::new(0.0, bars.len() as f64, y0, y1) } else { Frame::new(0.0, 1.0, 0.0, 1.0) };
    let mut out = String::new();
    header(&mut out, title);
    axes(&mut out, &f, "", y_label, false);
    let slot = (W - LEFT - RIGHT) / bars.len().max(1) as f64;
    let zero = f.py(0.0);
    for (i, b) in bars.iter().enumerate() {
        let c = PALETTE[i % PALETTE.len()];
        let x = LEFT + slot * (i as f64 + 0.15);
        let w = slot * 0.7;
        let top = f.py(b.mean);
        let (y, h) = if top < zero { (top, zero - top) } else { (zero, top - zero) };
        let _ = writeln!(out, r#"<rect x="{x:.2}" y="{y:.2}" width="{w:.2}" height="{h:.2}" fill="{c}"/>"#);
        let cx = x + w / 2.0;
        let _ = writeln!(
            out,
            r#"<line x1="{cx:.2}" y1="{:.2}" x2="{cx:.2}" y2="{:.2}" stroke="black"/>"#,
            f.py(b.mean - b.se),
            f.py(b.mean + b.se)
        );
        let _ = writeln!(out, r#"<text x="{cx:.2}" y="{}" text-anchor="middle">{}</text>"#, H - BOTTOM + 16.0, escape(&b.label));
    }
    out.push_str("</svg>\n");
    out
}
