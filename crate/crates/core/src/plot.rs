//! Bare-bones SVG line charts.

use std::fmt::Write;

pub const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

#[derive(Clone, Debug)]
pub struct Line {
    pub label: String,
    pub color: String,
    pub points: Vec<(f64, f64)>,
    /// Optional shaded band `(x, lo, hi)`.
    pub band: Option<Vec<(f64, f64, f64)>>,
}

#[derive(Clone, Debug)]
pub struct Chart {
    pub width: f64,
    pub height: f64,
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
    pub x_label: String,
    pub y_label: String,
    pub title: String,
}

impl Default for Chart {
    fn default() -> Self {
        Self {
            width: 800.0,
            height: 500.0,
            x_range: (0.0, 1.0),
            y_range: (0.0, 1.0),
            x_label: String::new(),
            y_label: String::new(),
            title: String::new(),
        }
    }
}

const MARGIN: (f64, f64, f64, f64) = (60.0, 20.0, 40.0, 50.0); // left, right, top, bottom

impl Chart {
    fn sx(&self, x: f64) -> f64 {
        let (x0, x1) = self.x_range;
        MARGIN.0 + (x - x0) / (x1 - x0).max(f64::EPSILON) * (self.width - MARGIN.0 - MARGIN.1)
    }

    fn sy(&self, y: f64) -> f64 {
        let (y0, y1) = self.y_range;
        let h = self.height - MARGIN.2 - MARGIN.3;
        MARGIN.2 + h - (y.clamp(y0, y1) - y0) / (y1 - y0).max(f64::EPSILON) * h
    }

    pub fn render(&self, lines: &[Line]) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#,
            w = self.width,
            h = self.height
        );
        let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let (l, b) = (MARGIN.0, self.height - MARGIN.3);
        let r = self.width - MARGIN.1;
        let _ = writeln!(
            s,
            r#"<path d="M{l},{t} L{l},{b} L{r},{b}" stroke="black" fill="none"/>"#,
            t = MARGIN.2
        );
        for k in 0..=5 {
            let fx = self.x_range.0 + (self.x_range.1 - self.x_range.0) * k as f64 / 5.0;
            let fy = self.y_range.0 + (self.y_range.1 - self.y_range.0) * k as f64 / 5.0;
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{:.2}</text>"#,
                self.sx(fx),
                b + 16.0,
                fx
            );
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{:.2}</text>"#,
                l - 6.0,
                self.sy(fy) + 4.0,
                fy
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            (l + r) / 2.0,
            self.height - 12.0,
            escape(&self.x_label)
        );
        let _ = writeln!(
            s,
            r#"<text x="14" y="{:.1}" text-anchor="middle" transform="rotate(-90 14 {:.1})">{}</text>"#,
            (MARGIN.2 + b) / 2.0,
            (MARGIN.2 + b) / 2.0,
            escape(&self.y_label)
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="20" text-anchor="middle" font-size="14">{}</text>"#,
            (l + r) / 2.0,
            escape(&self.title)
        );
        for line in lines {
            if let Some(band) = &line.band {
                let mut d = String::new();
                for (i, &(x, _, hi)) in band.iter().enumerate() {
                    let _ = write!(d, "{}{:.2},{:.2} ", if i == 0 { "M" } else { "L" }, self.sx(x), self.sy(hi));
                }
                for &(x, lo, _) in band.iter().rev() {
                    let _ = write!(d, "L{:.2},{:.2} ", self.sx(x), self.sy(lo));
                }
                let _ = writeln!(s, r#"<path d="{}Z" fill="{}" fill-opacity="0.2" stroke="none"/>"#, d, line.color);
            }
        }
        for (i, line) in lines.iter().enumerate() {
            let pts: Vec<String> = line
                .points
                .iter()
                .map(|&(x, y)| format!("{:.2},{:.2}", self.sx(x), self.sy(y)))
                .collect();
            let _ = writeln!(
                s,
                r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="1.5"><title>{}</title></polyline>"#,
                pts.join(" "),
                line.color,
                escape(&line.label)
            );
            let ly = MARGIN.2 + 14.0 * i as f64 + 8.0;
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}" fill="{}" text-anchor="end">{}</text>"#,
                r - 4.0,
                ly,
                line.color,
                escape(&line.label)
            );
        }
        s.push_str("</svg>\n");
        s
    }
}

pub fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
