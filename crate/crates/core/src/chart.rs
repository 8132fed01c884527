//! Minimal SVG rendering for report charts: grouped bars (linear or log
//! y-axis) and line series with vertical markers.

use std::fmt::Write;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 70.0;
const PALETTE: [&str; 6] = ["#4e79a7", "#f28e2b", "#59a14f", "#e15759", "#76b7b2", "#b07aa1"];

#[derive(Debug, Clone, PartialEq)]
pub struct BarGroup {
    pub label: String,
    /// (series name, value)
    pub bars: Vec<(String, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BarChart {
    pub title: String,
    pub y_label: String,
    pub log_scale: bool,
    /// Fixed axis range; derived from the data when `None`.
    pub y_range: Option<(f64, f64)>,
    pub groups: Vec<BarGroup>,
    /// Horizontal dashed lines (label, value).
    pub reference_lines: Vec<(String, f64)>,
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn header(out: &mut String, title: &str) {
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"sans-serif\" font-size=\"11\">"
    );
    let _ = writeln!(out, "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>");
    let _ = writeln!(
        out,
        "<text x=\"{}\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">{}</text>",
        WIDTH / 2.0,
        esc(title)
    );
}

struct YAxis {
    lo: f64,
    hi: f64,
    log: bool,
}

impl YAxis {
    fn new(values: impl Iterator<Item = f64>, log: bool, fixed: Option<(f64, f64)>) -> Self {
        if let Some((lo, hi)) = fixed {
            return Self { lo, hi, log };
        }
        let (mut min, mut max) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values.filter(|v| v.is_finite() && (!log || *v > 0.0)) {
            min = min.min(v);
            max = max.max(v);
        }
        if !min.is_finite() {
            return Self { lo: if log { 1.0 } else { 0.0 }, hi: 10.0, log };
        }
        if log {
            let lo = 10f64.powf(min.log10().floor());
            let mut hi = 10f64.powf(max.log10().ceil());
            if hi <= lo {
                hi = lo * 10.0;
            }
            Self { lo, hi, log }
        } else {
            let hi = if max <= 0.0 { 1.0 } else { max * 1.1 };
            Self { lo: min.min(0.0), hi, log }
        }
    }

    fn frac(&self, v: f64) -> f64 {
        let f = if self.log {
            (v.max(self.lo).log10() - self.lo.log10()) / (self.hi.log10() - self.lo.log10())
        } else {
            (v - self.lo) / (self.hi - self.lo)
        };
        f.clamp(0.0, 1.0)
    }

    fn y(&self, v: f64) -> f64 {
        let plot_h = HEIGHT - TOP - BOTTOM;
        TOP + plot_h * (1.0 - self.frac(v))
    }

    fn ticks(&self) -> Vec<f64> {
        if self.log {
            let (a, b) = (self.lo.log10().round() as i32, self.hi.log10().round() as i32);
            (a..=b).map(|e| 10f64.powi(e)).collect()
        } else {
            (0..=5).map(|i| self.lo + (self.hi - self.lo) * i as f64 / 5.0).collect()
        }
    }
}

fn fmt_tick(v: f64) -> String {
    if v != 0.0 && (v.abs() >= 1e5 || v.abs() < 1e-2) {
        format!("{v:.0e}")
    } else if v.fract() == 0.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}

fn y_axis(out: &mut String, axis: &YAxis, label: &str) {
    let x_end = WIDTH - RIGHT;
    for t in axis.ticks() {
        let y = axis.y(t);
        let _ = writeln!(
            out,
            "<line x1=\"{LEFT}\" y1=\"{y:.2}\" x2=\"{x_end}\" y2=\"{y:.2}\" stroke=\"#ddd\"/><text x=\"{}\" y=\"{:.2}\" text-anchor=\"end\">{}</text>",
            LEFT - 6.0,
            y + 4.0,
            fmt_tick(t)
        );
    }
    let mid = TOP + (HEIGHT - TOP - BOTTOM) / 2.0;
    let _ = writeln!(
        out,
        "<text x=\"16\" y=\"{mid}\" transform=\"rotate(-90 16 {mid})\" text-anchor=\"middle\">{}</text>",
        esc(label)
    );
    let _ = writeln!(
        out,
        "<line x1=\"{LEFT}\" y1=\"{TOP}\" x2=\"{LEFT}\" y2=\"{}\" stroke=\"black\"/>",
        HEIGHT - BOTTOM
    );
}

impl BarChart {
    pub fn to_svg(&self) -> String {
        let mut out = String::new();
        header(&mut out, &self.title);
        let values = self
            .groups
            .iter()
            .flat_map(|g| g.bars.iter().map(|b| b.1))
            .chain(self.reference_lines.iter().map(|r| r.1));
        let axis = YAxis::new(values, self.log_scale, self.y_range);
        y_axis(&mut out, &axis, &self.y_label);

        let mut series: Vec<&str> = Vec::new();
        for g in &self.groups {
            for (name, _) in &g.bars {
                if !series.contains(&name.as_str()) {
                    series.push(name);
                }
            }
        }
        let plot_w = WIDTH - LEFT - RIGHT;
        let group_w = plot_w / self.groups.len().max(1) as f64;
        let base = HEIGHT - BOTTOM;
        for (gi, g) in self.groups.iter().enumerate() {
            let gx = LEFT + gi as f64 * group_w;
            let bar_w = group_w * 0.8 / g.bars.len().max(1) as f64;
            let _ = writeln!(out, "<g class=\"group\">");
            for (bi, (name, v)) in g.bars.iter().enumerate() {
                let color = PALETTE[series.iter().position(|s| s == name).unwrap_or(0) % PALETTE.len()];
                let y = axis.y(*v);
                let x = gx + group_w * 0.1 + bi as f64 * bar_w;
                let _ = writeln!(
                    out,
                    "<rect class=\"bar\" x=\"{x:.2}\" y=\"{y:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"{color}\"><title>{}: {}</title></rect>",
                    bar_w * 0.95,
                    base - y,
                    esc(name),
                    v
                );
            }
            let _ = writeln!(
                out,
                "<text x=\"{:.2}\" y=\"{}\" text-anchor=\"middle\">{}</text></g>",
                gx + group_w / 2.0,
                base + 16.0,
                esc(&g.label)
            );
        }
        for (label, v) in &self.reference_lines {
            let y = axis.y(*v);
            let _ = writeln!(
                out,
                "<line class=\"reference\" x1=\"{LEFT}\" y1=\"{y:.2}\" x2=\"{}\" y2=\"{y:.2}\" stroke=\"#888\" stroke-dasharray=\"4 3\"/><text x=\"{}\" y=\"{:.2}\" text-anchor=\"end\" fill=\"#555\">{}</text>",
                WIDTH - RIGHT,
                WIDTH - RIGHT,
                y - 3.0,
                esc(label)
            );
        }
        legend(&mut out, &series);
        out.push_str("</svg>\n");
        out
    }
}

fn legend(out: &mut String, series: &[&str]) {
    for (i, name) in series.iter().enumerate() {
        let x = LEFT + i as f64 * 130.0;
        let y = HEIGHT - 24.0;
        let _ = writeln!(
            out,
            "<rect x=\"{x}\" y=\"{}\" width=\"10\" height=\"10\" fill=\"{}\"/><text x=\"{}\" y=\"{y}\">{}</text>",
            y - 9.0,
            PALETTE[i % PALETTE.len()],
            x + 14.0,
            esc(name)
        );
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LineSeries {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LineChart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<LineSeries>,
    /// Vertical markers (label, x).
    pub markers: Vec<(String, f64)>,
}

impl LineChart {
    pub fn to_svg(&self) -> String {
        let mut out = String::new();
        header(&mut out, &self.title);
        let axis = YAxis::new(self.series.iter().flat_map(|s| s.points.iter().map(|p| p.1)), false, None);
        y_axis(&mut out, &axis, &self.y_label);
        let xs = self.series.iter().flat_map(|s| s.points.iter().map(|p| p.0));
        let (xmin, xmax) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
        let (xmin, xmax) = if xmin.is_finite() && xmax > xmin { (xmin, xmax) } else { (0.0, 1.0) };
        let plot_w = WIDTH - LEFT - RIGHT;
        let px = |x: f64| LEFT + plot_w * ((x - xmin) / (xmax - xmin)).clamp(0.0, 1.0);
        let base = HEIGHT - BOTTOM;
        let _ = writeln!(
            out,
            "<line x1=\"{LEFT}\" y1=\"{base}\" x2=\"{}\" y2=\"{base}\" stroke=\"black\"/><text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>",
            WIDTH - RIGHT,
            LEFT + plot_w / 2.0,
            base + 30.0,
            esc(&self.x_label)
        );
        for (i, s) in self.series.iter().enumerate() {
            let pts: Vec<String> = s.points.iter().map(|&(x, y)| format!("{:.2},{:.2}", px(x), axis.y(y))).collect();
            let _ = writeln!(
                out,
                "<polyline class=\"series\" fill=\"none\" stroke=\"{}\" stroke-width=\"2\" points=\"{}\"/>",
                PALETTE[i % PALETTE.len()],
                pts.join(" ")
            );
        }
        for (label, x) in &self.markers {
            let mx = px(*x);
            let _ = writeln!(
                out,
                "<line class=\"marker\" x1=\"{mx:.2}\" y1=\"{TOP}\" x2=\"{mx:.2}\" y2=\"{base}\" stroke=\"#c00\" stroke-dasharray=\"5 3\"/><text x=\"{:.2}\" y=\"{}\" fill=\"#c00\">{}</text>",
                mx + 4.0,
                TOP + 12.0,
                esc(label)
            );
        }
        let names: Vec<&str> = self.series.iter().map(|s| s.name.as_str()).collect();
        legend(&mut out, &names);
        out.push_str("</svg>\n");
        out
    }
}
