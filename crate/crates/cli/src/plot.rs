//! Minimal self-contained SVG line charts.

use std::fmt::Write as _;

const WIDTH: f64 = 900.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;

/// Long series are reduced to a min/max pair per pixel column.
const MAX_COLUMNS: usize = 1200;

pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    pub color: &'static str,
    /// Draw markers at each point instead of only a line.
    pub markers: bool,
}

impl Series {
    pub fn line(label: &str, points: Vec<(f64, f64)>, color: &'static str) -> Self {
        Self { label: label.to_string(), points, color, markers: false }
    }
}

pub struct Chart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_y: bool,
    pub series: Vec<Series>,
    /// Dotted vertical lines `(x, label)`.
    pub markers_x: Vec<(f64, String)>,
}

impl Chart {
    pub fn new(title: &str, x_label: &str, y_label: &str) -> Self {
        Self {
            title: title.to_string(),
            x_label: x_label.to_string(),
            y_label: y_label.to_string(),
            log_y: false,
            series: Vec::new(),
            markers_x: Vec::new(),
        }
    }

    pub fn render(&self) -> String {
        let ty = |y: f64| if self.log_y { y.max(f64::MIN_POSITIVE).log10() } else { y };
        let mut xs = (f64::INFINITY, f64::NEG_INFINITY);
        let mut ys = (f64::INFINITY, f64::NEG_INFINITY);
        for s in &self.series {
            for &(x, y) in &s.points {
                if !(x.is_finite() && y.is_finite()) || (self.log_y && y <= 0.0) {
                    continue;
                }
                xs = (xs.0.min(x), xs.1.max(x));
                ys = (ys.0.min(ty(y)), ys.1.max(ty(y)));
            }
        }
        for (x, _) in &self.markers_x {
            if x.is_finite() {
                xs = (xs.0.min(*x), xs.1.max(*x));
            }
        }
        if !xs.0.is_finite() {
            xs = (0.0, 1.0);
            ys = (0.0, 1.0);
        }
        let pad = |(lo, hi): (f64, f64)| if hi > lo { (lo, hi) } else { (lo - 0.5, hi + 0.5) };
        let (xs, ys) = (pad(xs), pad(ys));
        let ys = if self.log_y { (ys.0.floor(), ys.1.ceil()) } else { ys };
        let (x0, x1, y0, y1) = (LEFT, WIDTH - RIGHT, HEIGHT - BOTTOM, TOP);
        let px = |x: f64| x0 + (x - xs.0) / (xs.1 - xs.0) * (x1 - x0);
        let py = |y: f64| y0 + (ty(y) - ys.0) / (ys.1 - ys.0) * (y1 - y0);

        let mut svg = String::new();
        let _ = writeln!(
            svg,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(svg, r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#, WIDTH / 2.0, esc(&self.title));

        // axes and ticks
        let _ = writeln!(svg, r#"<path d="M{x0},{y1} L{x0},{y0} L{x1},{y0}" stroke="black" fill="none"/>"#);
        for v in ticks(xs.0, xs.1) {
            let x = px(v);
            let _ = writeln!(svg, r##"<line x1="{x:.1}" y1="{y0}" x2="{x:.1}" y2="{y1}" stroke="#e4e4e4"/>"##);
            let _ = writeln!(svg, r#"<text x="{x:.1}" y="{}" text-anchor="middle">{}</text>"#, y0 + 16.0, tick_label(v));
        }
        let y_ticks: Vec<f64> = if self.log_y {
            (ys.0 as i32..=ys.1 as i32).map(|e| 10f64.powi(e)).collect()
        } else {
            ticks(ys.0, ys.1)
        };
        for v in y_ticks {
            let y = py(v);
            let _ = writeln!(svg, r##"<line x1="{x0}" y1="{y:.1}" x2="{x1}" y2="{y:.1}" stroke="#e4e4e4"/>"##);
            let _ = writeln!(svg, r#"<text x="{}" y="{:.1}" text-anchor="end">{}</text>"#, x0 - 6.0, y + 4.0, tick_label(v));
        }
        let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, (x0 + x1) / 2.0, HEIGHT - 18.0, esc(&self.x_label));
        let _ = writeln!(
            svg,
            r#"<text x="18" y="{}" text-anchor="middle" transform="rotate(-90 18 {})">{}</text>"#,
            (y0 + y1) / 2.0,
            (y0 + y1) / 2.0,
            esc(&self.y_label)
        );

        for (x, label) in &self.markers_x {
            if !x.is_finite() {
                continue;
            }
            let x = px(*x);
            let _ = writeln!(svg, r#"<line x1="{x:.1}" y1="{y0}" x2="{x:.1}" y2="{y1}" stroke="black" stroke-dasharray="2,4"/>"#);
            let _ = writeln!(svg, r#"<text x="{:.1}" y="{}">{}</text>"#, x + 4.0, y1 + 12.0, esc(label));
        }

        for (i, s) in self.series.iter().enumerate() {
            let pts = reduce(&s.points, xs, self.log_y);
            let mut d = String::new();
            let mut pen_down = false;
            for &(x, y) in &pts {
                if !(x.is_finite() && y.is_finite()) || (self.log_y && y <= 0.0) {
                    pen_down = false;
                    continue;
                }
                let _ = write!(d, "{}{:.1},{:.1} ", if pen_down { "L" } else { "M" }, px(x), py(y));
                pen_down = true;
            }
            let _ = writeln!(svg, r#"<path d="{}" stroke="{}" stroke-width="1.2" fill="none"/>"#, d.trim_end(), s.color);
            if s.markers {
                for &(x, y) in &pts {
                    if x.is_finite() && y.is_finite() && !(self.log_y && y <= 0.0) {
                        let _ = writeln!(svg, r#"<circle cx="{:.1}" cy="{:.1}" r="3" fill="{}"/>"#, px(x), py(y), s.color);
                    }
                }
            }
            let ly = y1 + 14.0 + 16.0 * i as f64;
            let _ = writeln!(svg, r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{}" stroke-width="2"/>"#, x1 - 150.0, x1 - 130.0, s.color);
            let _ = writeln!(svg, r#"<text x="{}" y="{}">{}</text>"#, x1 - 125.0, ly + 4.0, esc(&s.label));
        }
        svg.push_str("</svg>\n");
        svg
    }
}

/// Keeps the min and max point of every pixel column so envelopes of
/// fast oscillations survive decimation.
fn reduce(points: &[(f64, f64)], xs: (f64, f64), log_y: bool) -> Vec<(f64, f64)> {
    if points.len() <= 2 * MAX_COLUMNS {
        return points.to_vec();
    }
    let width = (xs.1 - xs.0) / MAX_COLUMNS as f64;
    let mut out = Vec::with_capacity(3 * MAX_COLUMNS);
    let mut col = usize::MAX;
    let mut lo: Option<(f64, f64)> = None;
    let mut hi: Option<(f64, f64)> = None;
    let flush = |lo: &mut Option<(f64, f64)>, hi: &mut Option<(f64, f64)>, out: &mut Vec<(f64, f64)>| {
        if let (Some(a), Some(b)) = (lo.take(), hi.take()) {
            if a.0 <= b.0 {
                out.extend([a, b]);
            } else {
                out.extend([b, a]);
            }
        }
    };
    for &(x, y) in points {
        if !(x.is_finite() && y.is_finite()) || (log_y && y <= 0.0) {
            continue;
        }
        let c = ((x - xs.0) / width) as usize;
        if c != col {
            flush(&mut lo, &mut hi, &mut out);
            col = c;
        }
        if lo.is_none_or(|p| y < p.1) {
            lo = Some((x, y));
        }
        if hi.is_none_or(|p| y > p.1) {
            hi = Some((x, y));
        }
    }
    flush(&mut lo, &mut hi, &mut out);
    out
}

/// Roughly five round-numbered ticks covering `[lo, hi]`.
fn ticks(lo: f64, hi: f64) -> Vec<f64> {
    let span = hi - lo;
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0].iter().map(|m| m * mag).find(|s| *s >= raw).unwrap_or(10.0 * mag);
    let start = (lo / step).ceil() as i64;
    let end = (hi / step).floor() as i64;
    (start..=end).map(|k| k as f64 * step).collect()
}

fn tick_label(v: f64) -> String {
    let a = v.abs();
    if v == 0.0 {
        "0".into()
    } else if !(1e-3..1e5).contains(&a) {
        format!("{v:.0e}")
    } else if a >= 100.0 || v.fract() == 0.0 {
        format!("{v:.0}")
    } else {
        let s = format!("{v:.3}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
