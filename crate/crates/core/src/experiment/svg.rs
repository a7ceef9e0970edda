//! Minimal self-contained SVG figures. Coordinates are printed with fixed
//! precision so the same data always yields the same bytes.

use std::fmt::Write;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 440.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;

pub const PALETTE: [&str; 6] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b"];

#[derive(Debug, Clone)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
    pub color: &'static str,
    pub dashed: bool,
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn header(out: &mut String, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
        (LEFT + WIDTH - RIGHT) / 2.0,
        escape(title)
    );
}

fn axis_labels(out: &mut String, x_label: &str, y_label: &str) {
    let cx = (LEFT + WIDTH - RIGHT) / 2.0;
    let cy = (TOP + HEIGHT - BOTTOM) / 2.0;
    let _ = writeln!(
        out,
        r#"<text x="{cx:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
        HEIGHT - 15.0,
        escape(x_label)
    );
    let _ = writeln!(
        out,
        r#"<text x="18" y="{cy:.1}" text-anchor="middle" transform="rotate(-90 18 {cy:.1})">{}</text>"#,
        escape(y_label)
    );
}

/// Round tick spacing giving about five ticks over `[lo, hi]`.
fn ticks(lo: f64, hi: f64) -> Vec<f64> {
    let span = (hi - lo).max(1e-12);
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| span / s <= 6.0)
        .unwrap_or(10.0 * mag);
    let first = (lo / step).ceil() as i64;
    let last = (hi / step).floor() as i64;
    (first..=last).map(|i| i as f64 * step).collect()
}

fn tick_label(v: f64) -> String {
    let s = format!("{v:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" { "0".into() } else { s.to_string() }
}

pub fn line_plot(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let finite = |p: &&(f64, f64)| p.0.is_finite() && p.1.is_finite();
    let pts: Vec<(f64, f64)> = series.iter().flat_map(|s| s.points.iter().filter(finite).copied()).collect();
    let (mut x0, mut x1, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for &(x, y) in &pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y1 = y1.max(y);
    }
    if pts.is_empty() {
        (x0, x1, y1) = (0.0, 1.0, 1.0);
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    let y0 = 0.0;
    let y1 = if y1 > 0.0 { y1 * 1.05 } else { 1.0 };
    let pw = WIDTH - LEFT - RIGHT;
    let ph = HEIGHT - TOP - BOTTOM;
    let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| TOP + ph - (y - y0) / (y1 - y0) * ph;

    let mut out = String::new();
    header(&mut out, title);
    let _ = writeln!(out, r##"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="#333"/>"##);
    for t in ticks(x0, x1) {
        let x = sx(t);
        let _ = writeln!(out, r##"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="#333"/>"##, TOP + ph, TOP + ph + 5.0);
        let _ = writeln!(out, r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, TOP + ph + 18.0, tick_label(t));
    }
    for t in ticks(y0, y1) {
        let y = sy(t);
        let _ = writeln!(out, r##"<line x1="{LEFT}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#ddd"/>"##, LEFT + pw);
        let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#, LEFT - 6.0, y + 4.0, tick_label(t));
    }
    axis_labels(&mut out, x_label, y_label);
    for (k, s) in series.iter().enumerate() {
        let path: Vec<String> = s
            .points
            .iter()
            .filter(finite)
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        let dash = if s.dashed { r#" stroke-dasharray="6 4""# } else { "" };
        if !path.is_empty() {
            let _ = writeln!(
                out,
                r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="2"{dash}/>"#,
                path.join(" "),
                s.color
            );
            for p in &path {
                let (x, y) = p.split_once(',').unwrap_or(("0", "0"));
                let _ = writeln!(out, r#"<circle cx="{x}" cy="{y}" r="3" fill="{}"/>"#, s.color);
            }
        }
        let ly = TOP + 14.0 + 20.0 * k as f64;
        let lx = WIDTH - RIGHT + 12.0;
        let _ = writeln!(
            out,
            r#"<line x1="{lx:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{}" stroke-width="2"{dash}/>"#,
            lx + 22.0,
            s.color
        );
        let _ = writeln!(out, r#"<text x="{:.1}" y="{:.1}">{}</text>"#, lx + 28.0, ly + 4.0, escape(&s.name));
    }
    out.push_str("</svg>\n");
    out
}

/// Color for a value in `[0, 1]`, interpolated over a dark-to-light ramp.
fn ramp(v: f64) -> String {
    const STOPS: [(f64, [f64; 3]); 5] = [
        (0.0, [68.0, 1.0, 84.0]),
        (0.25, [59.0, 82.0, 139.0]),
        (0.5, [33.0, 145.0, 140.0]),
        (0.75, [94.0, 201.0, 98.0]),
        (1.0, [253.0, 231.0, 37.0]),
    ];
    let v = v.clamp(0.0, 1.0);
    let i = STOPS.iter().rposition(|(s, _)| *s <= v).unwrap_or(0).min(STOPS.len() - 2);
    let (s0, c0) = STOPS[i];
    let (s1, c1) = STOPS[i + 1];
    let t = (v - s0) / (s1 - s0);
    let c: Vec<u8> = (0..3).map(|k| (c0[k] + t * (c1[k] - c0[k])).round() as u8).collect();
    format!("#{:02x}{:02x}{:02x}", c[0], c[1], c[2])
}

/// Heatmap of `value(row, col)` on the grid `rows × cols`; `None` cells are
/// left gray. Values are shown on a fixed `[0, 1]` scale.
pub fn heatmap<F>(title: &str, x_label: &str, y_label: &str, cols: &[f64], rows: &[f64], value: F) -> String
where
    F: Fn(usize, usize) -> Option<f64>,
{
    let pw = WIDTH - LEFT - RIGHT;
    let ph = HEIGHT - TOP - BOTTOM;
    let cw = pw / cols.len().max(1) as f64;
    let ch = ph / rows.len().max(1) as f64;
    let mut out = String::new();
    header(&mut out, title);
    for (i, _) in rows.iter().enumerate() {
        // first row at the bottom
        let y = TOP + ph - (i + 1) as f64 * ch;
        for (j, _) in cols.iter().enumerate() {
            let x = LEFT + j as f64 * cw;
            let fill = match value(i, j) {
                Some(v) if v.is_finite() => ramp(v),
                _ => "#e6e6e6".to_string(),
            };
            let _ = writeln!(out, r#"<rect x="{x:.2}" y="{y:.2}" width="{cw:.2}" height="{ch:.2}" fill="{fill}"/>"#);
        }
    }
    let _ = writeln!(out, r##"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="#333"/>"##);
    let every = (cols.len() / 7).max(1);
    for (j, c) in cols.iter().enumerate().step_by(every) {
        let x = LEFT + (j as f64 + 0.5) * cw;
        let _ = writeln!(out, r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, TOP + ph + 16.0, tick_label(*c));
    }
    let every = (rows.len() / 7).max(1);
    for (i, r) in rows.iter().enumerate().step_by(every) {
        let y = TOP + ph - (i as f64 + 0.5) * ch;
        let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#, LEFT - 6.0, y + 4.0, tick_label(*r));
    }
    axis_labels(&mut out, x_label, y_label);
    let lx = WIDTH - RIGHT + 20.0;
    for k in 0..=20 {
        let v = 1.0 - k as f64 / 20.0;
        let y = TOP + k as f64 * ph / 21.0;
        let _ = writeln!(out, r#"<rect x="{lx:.1}" y="{y:.2}" width="20" height="{:.2}" fill="{}"/>"#, ph / 21.0 + 0.5, ramp(v));
    }
    for v in [0.0, 0.5, 1.0] {
        let y = TOP + (1.0 - v) * 20.0 * ph / 21.0 + ph / 42.0;
        let _ = writeln!(out, r#"<text x="{:.1}" y="{:.2}">{}</text>"#, lx + 26.0, y + 4.0, tick_label(v));
    }
    out.push_str("</svg>\n");
    out
}
