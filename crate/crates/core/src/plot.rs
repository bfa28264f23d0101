//! Minimal deterministic SVG line plots.

use std::fmt::Write as _;

use crate::error::{Error, Result};

pub const WIDTH: f64 = 640.0;
pub const HEIGHT: f64 = 400.0;
const LEFT: f64 = 64.0;
const RIGHT: f64 = 24.0;
const TOP: f64 = 24.0;
const BOTTOM: f64 = 48.0;
const COLORS: [&str; 8] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reference {
    pub name: String,
    pub x: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Plot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
    pub references: Vec<Reference>,
}

/// Data-to-pixel mapping of a plot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Frame {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Frame {
    pub fn map_x(&self, x: f64) -> f64 {
        LEFT + (x - self.x_min) / (self.x_max - self.x_min) * (WIDTH - LEFT - RIGHT)
    }

    pub fn map_y(&self, y: f64) -> f64 {
        HEIGHT - BOTTOM - (y - self.y_min) / (self.y_max - self.y_min) * (HEIGHT - TOP - BOTTOM)
    }
}

fn widen(lo: f64, hi: f64) -> (f64, f64) {
    if hi > lo {
        (lo, hi)
    } else {
        (lo - 0.5, hi + 0.5)
    }
}

impl Plot {
    pub fn new(title: &str, x_label: &str, y_label: &str) -> Self {
        Self {
            title: title.into(),
            x_label: x_label.into(),
            y_label: y_label.into(),
            series: Vec::new(),
            references: Vec::new(),
        }
    }

    /// Bounds over all finite series points and reference lines; the y range
    /// gets a 5% margin on each side.
    pub fn frame(&self) -> Result<Frame> {
        let pts = self
            .series
            .iter()
            .flat_map(|s| s.points.iter())
            .filter(|(x, y)| x.is_finite() && y.is_finite());
        let xs = pts.clone().map(|p| p.0).chain(self.references.iter().map(|r| r.x));
        let (x_min, x_max) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
        let (y_min, y_max) = pts
            .map(|p| p.1)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), y| (a.min(y), b.max(y)));
        if !x_min.is_finite() || !y_min.is_finite() {
            return Err(Error::Empty("plot has no finite points".into()));
        }
        let (x_min, x_max) = widen(x_min, x_max);
        let (y_min, y_max) = widen(y_min, y_max);
        let pad = 0.05 * (y_max - y_min);
        Ok(Frame {
            x_min,
            x_max,
            y_min: y_min - pad,
            y_max: y_max + pad,
        })
    }

    pub fn to_svg(&self) -> Result<String> {
        if self.series.is_empty() {
            return Err(Error::Empty("plot needs at least one series".into()));
        }
        let f = self.frame()?;
        let mut s = String::new();
        writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
        )
        .unwrap();
        writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#).unwrap();
        let (x0, x1, y0, y1) = (LEFT, WIDTH - RIGHT, TOP, HEIGHT - BOTTOM);
        writeln!(
            s,
            r##"<rect x="{x0}" y="{y0}" width="{}" height="{}" fill="none" stroke="#444"/>"##,
            x1 - x0,
            y1 - y0
        )
        .unwrap();
        for k in 0..=4 {
            let t = k as f64 / 4.0;
            let xv = f.x_min + t * (f.x_max - f.x_min);
            let yv = f.y_min + t * (f.y_max - f.y_min);
            let (px, py) = (f.map_x(xv), f.map_y(yv));
            writeln!(
                s,
                r##"<text x="{px:.2}" y="{:.2}" text-anchor="middle" fill="#444">{}</text>"##,
                y1 + 16.0,
                tick(xv)
            )
            .unwrap();
            writeln!(
                s,
                r##"<text x="{:.2}" y="{:.2}" text-anchor="end" fill="#444">{}</text>"##,
                x0 - 6.0,
                py + 4.0,
                tick(yv)
            )
            .unwrap();
        }
        writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            (x0 + x1) / 2.0,
            HEIGHT - 10.0,
            escape(&self.x_label)
        )
        .unwrap();
        writeln!(
            s,
            r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">{}</text>"#,
            (y0 + y1) / 2.0,
            (y0 + y1) / 2.0,
            escape(&self.y_label)
        )
        .unwrap();
        writeln!(
            s,
            r#"<text x="{:.2}" y="16" text-anchor="middle">{}</text>"#,
            (x0 + x1) / 2.0,
            escape(&self.title)
        )
        .unwrap();
        for r in &self.references {
            let px = f.map_x(r.x);
            writeln!(
                s,
                r##"<line x1="{px:.2}" y1="{y0:.2}" x2="{px:.2}" y2="{y1:.2}" stroke="#555" stroke-dasharray="6 4"><title>{}</title></line>"##,
                escape(&r.name)
            )
            .unwrap();
        }
        for (i, series) in self.series.iter().enumerate() {
            let color = COLORS[i % COLORS.len()];
            let mut pts = String::new();
            for &(x, y) in series.points.iter().filter(|(x, y)| x.is_finite() && y.is_finite()) {
                if !pts.is_empty() {
                    pts.push(' ');
                }
                write!(pts, "{:.2},{:.2}", f.map_x(x), f.map_y(y)).unwrap();
            }
            writeln!(
                s,
                r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>"#
            )
            .unwrap();
            writeln!(
                s,
                r#"<text x="{:.2}" y="{:.2}" fill="{color}">{}</text>"#,
                x0 + 8.0,
                y0 + 16.0 + 14.0 * i as f64,
                escape(&series.name)
            )
            .unwrap();
        }
        s.push_str("</svg>\n");
        Ok(s)
    }
}

fn tick(v: f64) -> String {
    let s = format!("{v:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.into()
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(points: Vec<(f64, f64)>) -> Series {
        Series {
            name: "a".into(),
            points,
        }
    }

    #[test]
    fn one_polyline_per_series() {
        let mut p = Plot::new("t", "x", "y");
        p.series.push(series(vec![(0.0, 1.0), (1.0, 2.0), (2.0, 0.5)]));
        let svg = p.to_svg().unwrap();
        assert_eq!(svg.matches("<polyline").count(), 1);
        let pts = svg.split("points=\"").nth(1).unwrap().split('"').next().unwrap();
        assert_eq!(pts.split(' ').count(), 3);
        assert_eq!(p.to_svg().unwrap(), svg);
    }

    #[test]
    fn empty_plot_is_rejected() {
        assert!(Plot::new("t", "x", "y").to_svg().is_err());
    }

    #[test]
    fn frame_maps_corners() {
        let mut p = Plot::new("t", "x", "y");
        p.series.push(series(vec![(0.0, 0.0), (2.0, 10.0)]));
        let f = p.frame().unwrap();
        assert_eq!(f.map_x(0.0), LEFT);
        assert_eq!(f.map_x(2.0), WIDTH - RIGHT);
        assert!((f.map_y(-0.5) - (HEIGHT - BOTTOM)).abs() < 1e-9);
    }

    #[test]
    fn ticks_are_trimmed() {
        assert_eq!(tick(1.25), "1.25");
        assert_eq!(tick(2.0), "2");
        assert_eq!(tick(-0.0001), "0");
    }
}
