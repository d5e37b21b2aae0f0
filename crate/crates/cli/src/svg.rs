//! Minimal standalone SVG charts. Series are `<polyline class="series">`
//! elements carrying a `data-label` attribute so tests can parse them back.

use std::fmt::Write;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const LEFT: f64 = 78.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 56.0;

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LineChart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
    /// Forces the x axis range instead of fitting the data.
    pub x_range: Option<(f64, f64)>,
    pub log_y: bool,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Roughly five round-numbered ticks covering `[lo, hi]`.
pub fn nice_ticks(lo: f64, hi: f64) -> Vec<f64> {
    if !(hi > lo) {
        return vec![lo];
    }
    let raw = (hi - lo) / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 2.5, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| *s >= raw)
        .unwrap_or(10.0 * mag);
    let first = (lo / step).ceil() * step;
    let mut ticks = Vec::new();
    let mut k = 0.0;
    while first + k * step <= hi + step * 1e-9 {
        ticks.push(first + k * step);
        k += 1.0;
    }
    ticks
}

fn fmt_tick(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let a = v.abs();
    if !(1e-3..1e5).contains(&a) {
        format!("{v:.1e}")
    } else {
        let s = format!("{v:.4}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

fn padded(lo: f64, hi: f64) -> (f64, f64) {
    if hi > lo {
        let pad = 0.04 * (hi - lo);
        (lo - pad, hi + pad)
    } else {
        let pad = if lo == 0.0 { 1.0 } else { 0.1 * lo.abs() };
        (lo - pad, hi + pad)
    }
}

struct Frame {
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.x.0) / (self.x.1 - self.x.0) * (WIDTH - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - BOTTOM - (y - self.y.0) / (self.y.1 - self.y.0) * (HEIGHT - TOP - BOTTOM)
    }
}

fn open(out: &mut String, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, "<title>{}</title>", escape(title));
    let _ = writeln!(out, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text class="chart-title" x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
        (LEFT + WIDTH - RIGHT) / 2.0,
        escape(title)
    );
}

fn axes(out: &mut String, f: &Frame, x_label: &str, y_label: &str, y_fmt: &dyn Fn(f64) -> String) {
    let (x0, x1) = (LEFT, WIDTH - RIGHT);
    let (y0, y1) = (HEIGHT - BOTTOM, TOP);
    let _ = writeln!(
        out,
        r##"<path class="axis" d="M{x0} {y1} L{x0} {y0} L{x1} {y0}" fill="none" stroke="#333"/>"##
    );
    for t in nice_ticks(f.x.0, f.x.1) {
        let px = f.px(t);
        let _ = writeln!(
            out,
            r##"<line x1="{px:.2}" y1="{y0}" x2="{px:.2}" y2="{}" stroke="#333"/><text class="x-tick" x="{px:.2}" y="{}" text-anchor="middle">{}</text>"##,
            y0 + 5.0,
            y0 + 18.0,
            fmt_tick(t)
        );
    }
    for t in nice_ticks(f.y.0, f.y.1) {
        let py = f.py(t);
        let _ = writeln!(
            out,
            r##"<line x1="{}" y1="{py:.2}" x2="{x0}" y2="{py:.2}" stroke="#333"/><line x1="{x0}" y1="{py:.2}" x2="{x1}" y2="{py:.2}" stroke="#eee"/><text class="y-tick" x="{}" y="{:.2}" text-anchor="end">{}</text>"##,
            x0 - 5.0,
            x0 - 8.0,
            py + 4.0,
            y_fmt(t)
        );
    }
    let _ = writeln!(
        out,
        r#"<text class="x-label" x="{}" y="{}" text-anchor="middle">{}</text>"#,
        (x0 + x1) / 2.0,
        HEIGHT - 14.0,
        escape(x_label)
    );
    let _ = writeln!(
        out,
        r#"<text class="y-label" transform="translate(18 {}) rotate(-90)" text-anchor="middle">{}</text>"#,
        (y0 + y1) / 2.0,
        escape(y_label)
    );
}

fn legend(out: &mut String, entries: &[(String, &str)]) {
    for (i, (label, colour)) in entries.iter().enumerate() {
        let y = TOP + 10.0 + 18.0 * i as f64;
        let x = WIDTH - RIGHT + 14.0;
        let _ = writeln!(
            out,
            r#"<line x1="{x}" y1="{y}" x2="{}" y2="{y}" stroke="{colour}" stroke-width="2"/><text class="legend" x="{}" y="{}">{}</text>"#,
            x + 18.0,
            x + 24.0,
            y + 4.0,
            escape(label)
        );
    }
}

pub fn render_line_chart(chart: &LineChart) -> String {
    let tf = |y: f64| if chart.log_y { y.log10() } else { y };
    let pts = || {
        chart
            .series
            .iter()
            .flat_map(|s| s.points.iter())
            .filter(|(x, y)| x.is_finite() && tf(*y).is_finite())
    };
    let (mut xlo, mut xhi, mut ylo, mut yhi) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pts() {
        xlo = xlo.min(x);
        xhi = xhi.max(x);
        ylo = ylo.min(tf(y));
        yhi = yhi.max(tf(y));
    }
    if !xlo.is_finite() {
        (xlo, xhi, ylo, yhi) = (0.0, 1.0, 0.0, 1.0);
    }
    let x = chart.x_range.unwrap_or_else(|| if xhi > xlo { (xlo, xhi) } else { padded(xlo, xhi) });
    let frame = Frame {
        x,
        y: padded(ylo, yhi),
    };
    let mut out = String::new();
    open(&mut out, &chart.title);
    let y_fmt = |t: f64| if chart.log_y { format!("1e{}", fmt_tick(t)) } else { fmt_tick(t) };
    axes(&mut out, &frame, &chart.x_label, &chart.y_label, &y_fmt);
    let mut entries = Vec::new();
    for (i, s) in chart.series.iter().enumerate() {
        let colour = PALETTE[i % PALETTE.len()];
        let coords: Vec<String> = s
            .points
            .iter()
            .filter(|(x, y)| x.is_finite() && tf(*y).is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", frame.px(x), frame.py(tf(y))))
            .collect();
        let _ = writeln!(
            out,
            r#"<polyline class="series" data-label="{}" fill="none" stroke="{colour}" stroke-width="1.6" points="{}"/>"#,
            escape(&s.label),
            coords.join(" ")
        );
        entries.push((s.label.clone(), colour));
    }
    legend(&mut out, &entries);
    out.push_str("</svg>\n");
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Eigenvalue {
    pub re: f64,
    pub im: f64,
}

/// Eigenvalues on the complex plane with the unit circle and the
/// `|λ − 1| < tol` disc. Markers inside the disc get `data-near="1"`.
pub fn render_spectrum(title: &str, eigenvalues: &[Eigenvalue], tol: f64) -> String {
    let extent = eigenvalues
        .iter()
        .map(|e| e.re.abs().max(e.im.abs()))
        .fold(1.1_f64, f64::max)
        .min(1e6);
    // Square data region: pad the x range so circles stay round.
    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let half_y = extent * 1.05;
    let half_x = half_y * plot_w / plot_h;
    let frame = Frame {
        x: (-half_x, half_x),
        y: (-half_y, half_y),
    };
    let scale = plot_h / (2.0 * half_y);
    let mut out = String::new();
    open(&mut out, title);
    axes(&mut out, &frame, "Re λ", "Im λ", &fmt_tick);
    let _ = writeln!(
        out,
        r##"<circle class="unit-circle" cx="{:.2}" cy="{:.2}" r="{:.2}" fill="none" stroke="#888" stroke-dasharray="4 3"/>"##,
        frame.px(0.0),
        frame.py(0.0),
        scale
    );
    let _ = writeln!(
        out,
        r##"<circle class="tol-region" cx="{:.2}" cy="{:.2}" r="{:.2}" fill="#2ca02c" fill-opacity="0.15" stroke="#2ca02c"/>"##,
        frame.px(1.0),
        frame.py(0.0),
        (tol * scale).max(2.0)
    );
    for e in eigenvalues {
        let near = ((e.re - 1.0).powi(2) + e.im.powi(2)).sqrt() < tol;
        let (colour, r) = if near { ("#d62728", 5.0) } else { ("#1f77b4", 3.5) };
        let _ = writeln!(
            out,
            r#"<circle class="eig" data-re="{}" data-im="{}" data-near="{}" cx="{:.2}" cy="{:.2}" r="{r}" fill="{colour}"/>"#,
            e.re,
            e.im,
            u8::from(near),
            frame.px(e.re),
            frame.py(e.im)
        );
    }
    legend(
        &mut out,
        &[
            (format!("|λ−1| < {tol}"), "#d62728"),
            ("other eigenvalues".to_string(), "#1f77b4"),
            ("unit circle".to_string(), "#888"),
        ],
    );
    out.push_str("</svg>\n");
    out
}
