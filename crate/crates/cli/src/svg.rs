//! Minimal hand-written SVG charts on a fixed 800x600 canvas.

use std::fmt::Write;

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 600.0;
const TOP: f64 = 50.0;
const BOTTOM: f64 = 540.0;
const RIGHT: f64 = 770.0;

const POSITIVE: &str = "#2b6cb0";
const NEGATIVE: &str = "#c53030";
const NEUTRAL: &str = "#4a5568";

/// `v` with 4 significant digits.
pub fn sig(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return if v == 0.0 { "0".into() } else { v.to_string() };
    }
    let mag = v.abs().log10().floor() as i32;
    if !(-4..6).contains(&mag) {
        return format!("{v:.3e}");
    }
    let decimals = (3 - mag).max(0) as usize;
    let s = format!("{v:.decimals$}");
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Maps `[lo, hi]` onto `[a, b]`; a degenerate range is widened.
#[derive(Clone, Copy)]
struct Scale {
    lo: f64,
    hi: f64,
    a: f64,
    b: f64,
}

impl Scale {
    fn new(lo: f64, hi: f64, a: f64, b: f64) -> Self {
        let (lo, hi) = if hi > lo {
            let pad = 0.05 * (hi - lo);
            (lo - pad, hi + pad)
        } else {
            let w = if lo == 0.0 { 1.0 } else { 0.1 * lo.abs() };
            (lo - w, hi + w)
        };
        Self { lo, hi, a, b }
    }

    fn at(&self, v: f64) -> f64 {
        self.a + (v - self.lo) / (self.hi - self.lo) * (self.b - self.a)
    }

    fn ticks(&self, count: usize) -> Vec<f64> {
        (0..count)
            .map(|k| self.lo + (self.hi - self.lo) * k as f64 / (count - 1) as f64)
            .collect()
    }
}

fn extent(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            (lo.min(v), hi.max(v))
        })
}

struct Canvas {
    out: String,
    left: f64,
}

impl Canvas {
    fn new(title: &str, left: f64) -> Self {
        let mut out = String::new();
        writeln!(
            out,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
        )
        .unwrap();
        writeln!(
            out,
            r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#
        )
        .unwrap();
        writeln!(
            out,
            r#"<text x="{}" y="28" text-anchor="middle" font-size="16">{}</text>"#,
            WIDTH / 2.0,
            escape(title)
        )
        .unwrap();
        Self { out, left }
    }

    fn text(&mut self, x: f64, y: f64, anchor: &str, s: &str) {
        writeln!(
            self.out,
            r#"<text x="{x:.1}" y="{y:.1}" text-anchor="{anchor}">{}</text>"#,
            escape(s)
        )
        .unwrap();
    }

    fn line(&mut self, x1: f64, y1: f64, x2: f64, y2: f64, stroke: &str, dash: bool) {
        let dash = if dash {
            r#" stroke-dasharray="4 3""#
        } else {
            ""
        };
        writeln!(
            self.out,
            r#"<line x1="{x1:.1}" y1="{y1:.1}" x2="{x2:.1}" y2="{y2:.1}" stroke="{stroke}"{dash}/>"#
        )
        .unwrap();
    }

    fn rect(&mut self, x: f64, y: f64, w: f64, h: f64, fill: &str) {
        writeln!(
            self.out,
            r#"<rect x="{x:.1}" y="{y:.1}" width="{:.1}" height="{:.1}" fill="{fill}"/>"#,
            w.max(0.5),
            h.max(0.5)
        )
        .unwrap();
    }

    fn circle(&mut self, x: f64, y: f64, r: f64, fill: &str) {
        writeln!(
            self.out,
            r#"<circle cx="{x:.1}" cy="{y:.1}" r="{r}" fill="{fill}"/>"#
        )
        .unwrap();
    }

    fn x_axis(&mut self, scale: Scale, label: &str) {
        self.line(self.left, BOTTOM, RIGHT, BOTTOM, "black", false);
        for t in scale.ticks(6) {
            let x = scale.at(t);
            self.line(x, BOTTOM, x, BOTTOM + 5.0, "black", false);
            self.text(x, BOTTOM + 18.0, "middle", &sig(t));
        }
        self.text((self.left + RIGHT) / 2.0, BOTTOM + 40.0, "middle", label);
    }

    fn y_axis(&mut self, scale: Scale, label: &str) {
        self.line(self.left, TOP, self.left, BOTTOM, "black", false);
        for t in scale.ticks(6) {
            let y = scale.at(t);
            self.line(self.left - 5.0, y, self.left, y, "black", false);
            self.text(self.left - 8.0, y + 4.0, "end", &sig(t));
        }
        writeln!(
            self.out,
            r#"<text x="18" y="{:.1}" text-anchor="middle" transform="rotate(-90 18 {:.1})">{}</text>"#,
            (TOP + BOTTOM) / 2.0,
            (TOP + BOTTOM) / 2.0,
            escape(label)
        )
        .unwrap();
    }

    fn finish(mut self) -> String {
        self.out.push_str("</svg>\n");
        self.out
    }
}

/// Horizontal bars, one per label, drawn from zero.
pub fn bar_chart(title: &str, labels: &[String], values: &[f64], axis_label: &str) -> String {
    let mut c = Canvas::new(title, 170.0);
    let (lo, hi) = extent(values.iter().copied().chain([0.0]));
    let x = Scale::new(lo, hi, c.left, RIGHT);
    c.x_axis(x, axis_label);
    let band = (BOTTOM - TOP) / labels.len().max(1) as f64;
    let zero = x.at(0.0);
    for (k, (label, &v)) in labels.iter().zip(values).enumerate() {
        let y = TOP + band * k as f64;
        let (from, to) = if v >= 0.0 {
            (zero, x.at(v))
        } else {
            (x.at(v), zero)
        };
        c.rect(
            from,
            y + 0.15 * band,
            to - from,
            0.7 * band,
            if v >= 0.0 { POSITIVE } else { NEGATIVE },
        );
        c.text(c.left - 8.0, y + 0.5 * band + 4.0, "end", label);
        let tx = if v >= 0.0 { to + 4.0 } else { from - 4.0 };
        c.text(
            tx,
            y + 0.5 * band + 4.0,
            if v >= 0.0 { "start" } else { "end" },
            &sig(v),
        );
    }
    c.line(zero, TOP, zero, BOTTOM, NEUTRAL, false);
    c.finish()
}

/// Waterfall from `start` through cumulative `steps`; the last bar shows the
/// final level.
pub fn waterfall(
    title: &str,
    start: (&str, f64),
    steps: &[(String, f64)],
    end_label: &str,
    axis_label: &str,
) -> String {
    let mut c = Canvas::new(title, 170.0);
    let mut levels = vec![start.1];
    for (_, d) in steps {
        levels.push(levels.last().unwrap() + d);
    }
    let end = *levels.last().unwrap();
    let (lo, hi) = extent(levels.iter().copied());
    let x = Scale::new(lo, hi, c.left, RIGHT);
    c.x_axis(x, axis_label);
    let rows = steps.len() + 2;
    let band = (BOTTOM - TOP) / rows as f64;

    let bar =
        |c: &mut Canvas, k: usize, from: f64, to: f64, fill: &str, label: &str, value: String| {
            let y = TOP + band * k as f64;
            let (a, b) = if to >= from {
                (x.at(from), x.at(to))
            } else {
                (x.at(to), x.at(from))
            };
            c.rect(a, y + 0.15 * band, b - a, 0.7 * band, fill);
            c.text(c.left - 8.0, y + 0.5 * band + 4.0, "end", label);
            c.text(b + 4.0, y + 0.5 * band + 4.0, "start", &value);
        };
    bar(&mut c, 0, x.lo, start.1, NEUTRAL, start.0, sig(start.1));
    for (k, (label, d)) in steps.iter().enumerate() {
        let fill = if *d >= 0.0 { POSITIVE } else { NEGATIVE };
        bar(
            &mut c,
            k + 1,
            levels[k],
            levels[k + 1],
            fill,
            label,
            sig(*d),
        );
    }
    bar(&mut c, rows - 1, x.lo, end, NEUTRAL, end_label, sig(end));
    c.finish()
}

pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
    pub color: &'static str,
    pub dashed: bool,
}

/// Lines with point markers; `x_labels` replaces numeric ticks for
/// categorical axes.
pub fn line_chart(
    title: &str,
    x_label: &str,
    y_label: &str,
    series: &[Series],
    x_labels: Option<&[(f64, String)]>,
) -> String {
    let mut c = Canvas::new(title, 80.0);
    let (xlo, xhi) = extent(series.iter().flat_map(|s| s.points.iter().map(|p| p.0)));
    let (ylo, yhi) = extent(series.iter().flat_map(|s| s.points.iter().map(|p| p.1)));
    let (xlo, xhi) = if xlo.is_finite() {
        (xlo, xhi)
    } else {
        (0.0, 1.0)
    };
    let (ylo, yhi) = if ylo.is_finite() {
        (ylo, yhi)
    } else {
        (0.0, 1.0)
    };
    let x = Scale::new(xlo, xhi, c.left, RIGHT);
    let y = Scale::new(ylo, yhi, BOTTOM, TOP);
    match x_labels {
        Some(labels) => {
            c.line(c.left, BOTTOM, RIGHT, BOTTOM, "black", false);
            for (v, l) in labels {
                c.text(x.at(*v), BOTTOM + 18.0, "middle", l);
            }
            c.text((c.left + RIGHT) / 2.0, BOTTOM + 40.0, "middle", x_label);
        }
        None => c.x_axis(x, x_label),
    }
    c.y_axis(y, y_label);
    for (k, s) in series.iter().enumerate() {
        let path: Vec<String> = s
            .points
            .iter()
            .map(|&(a, b)| format!("{:.1},{:.1}", x.at(a), y.at(b)))
            .collect();
        let dash = if s.dashed {
            r#" stroke-dasharray="5 4""#
        } else {
            ""
        };
        writeln!(
            c.out,
            r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="1.5"{dash}/>"#,
            path.join(" "),
            s.color
        )
        .unwrap();
        for &(a, b) in &s.points {
            c.circle(x.at(a), y.at(b), 3.0, s.color);
        }
        let ly = TOP + 14.0 * k as f64;
        c.line(RIGHT - 150.0, ly, RIGHT - 130.0, ly, s.color, s.dashed);
        c.text(RIGHT - 125.0, ly + 4.0, "start", &s.name);
    }
    c.finish()
}

/// Scatter plot; the third coordinate, when present, colors points on a
/// blue-to-red ramp.
pub fn scatter(
    title: &str,
    x_label: &str,
    y_label: &str,
    points: &[(f64, f64, Option<f64>)],
    color_label: Option<&str>,
) -> String {
    let mut c = Canvas::new(title, 80.0);
    let (xlo, xhi) = extent(points.iter().map(|p| p.0));
    let (ylo, yhi) = extent(points.iter().map(|p| p.1));
    let (clo, chi) = extent(points.iter().filter_map(|p| p.2));
    let x = Scale::new(
        if xlo.is_finite() { xlo } else { 0.0 },
        if xhi.is_finite() { xhi } else { 1.0 },
        c.left,
        RIGHT,
    );
    let y = Scale::new(
        if ylo.is_finite() { ylo } else { 0.0 },
        if yhi.is_finite() { yhi } else { 1.0 },
        BOTTOM,
        TOP,
    );
    c.x_axis(x, x_label);
    c.y_axis(y, y_label);
    for &(a, b, col) in points {
        let fill = match col {
            Some(v) if chi > clo => ramp((v - clo) / (chi - clo)),
            _ => POSITIVE.to_string(),
        };
        c.circle(x.at(a), y.at(b), 2.0, &fill);
    }
    if let Some(label) = color_label {
        c.text(
            RIGHT,
            TOP - 8.0,
            "end",
            &format!("color: {label} ({} to {})", sig(clo), sig(chi)),
        );
    }
    c.finish()
}

fn ramp(t: f64) -> String {
    let t = t.clamp(0.0, 1.0);
    let r = (43.0 + t * (197.0 - 43.0)).round() as u8;
    let g = (108.0 + t * (48.0 - 108.0)).round() as u8;
    let b = (176.0 + t * (48.0 - 176.0)).round() as u8;
    format!("#{r:02x}{g:02x}{b:02x}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn four_significant_digits() {
        assert_eq!(sig(1234.567), "1235");
        assert_eq!(sig(0.012345), "0.01235");
        assert_eq!(sig(-2.5), "-2.5");
        assert_eq!(sig(0.0), "0");
        assert_eq!(sig(1.0e-7), "1.000e-7");
    }

    #[test]
    fn charts_have_fixed_canvas() {
        let svg = bar_chart("t", &["a".into(), "b<".into()], &[1.0, -2.0], "x");
        assert!(svg.starts_with("<svg") && svg.contains(r#"viewBox="0 0 800 600""#));
        assert!(svg.contains("b&lt;"));
        let w = waterfall(
            "w",
            ("start", 1.0),
            &[("a".into(), 0.5), ("b".into(), -0.2)],
            "end",
            "x",
        );
        assert!(w.contains(">1.3<"));
        let l = line_chart(
            "l",
            "x",
            "y",
            &[Series {
                name: "s".into(),
                points: vec![(0.0, 1.0), (1.0, 2.0)],
                color: POSITIVE,
                dashed: false,
            }],
            None,
        );
        assert!(l.contains("<polyline"));
        let s = scatter(
            "s",
            "x",
            "y",
            &[(0.0, 0.0, Some(1.0)), (1.0, 1.0, Some(2.0))],
            Some("z"),
        );
        assert_eq!(s.matches("<circle").count(), 2);
    }
}
