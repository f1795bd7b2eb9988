//! Self-contained SVG line plots of result tables.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::table::{format_f64, Cell, ResultTable};
use crate::error::{Error, Result};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 72.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 36.0;
const BOTTOM: f64 = 48.0;
const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf"];

/// What to draw from a table.
///
/// Rows sharing an x value within a line are reduced to the median of
/// their y values. Points that cannot be placed (non-finite, or not
/// positive on a log axis) are skipped.
#[derive(Clone, Debug, PartialEq)]
pub struct LinePlot {
    pub x: String,
    pub ys: Vec<String>,
    /// One line per distinct value of this column.
    pub series_by: Option<String>,
    pub log_x: bool,
    pub log_y: bool,
    /// Dashed reference line of this slope through the first line's centroid.
    pub guide_slope: Option<f64>,
    pub title: String,
}

impl LinePlot {
    pub fn new(x: &str, ys: &[&str]) -> Self {
        Self {
            x: x.into(),
            ys: ys.iter().map(|s| s.to_string()).collect(),
            series_by: None,
            log_x: false,
            log_y: false,
            guide_slope: None,
            title: String::new(),
        }
    }

    pub fn log_axes(mut self, log_x: bool, log_y: bool) -> Self {
        self.log_x = log_x;
        self.log_y = log_y;
        self
    }

    pub fn series_by(mut self, column: &str) -> Self {
        self.series_by = Some(column.into());
        self
    }

    pub fn guide(mut self, slope: f64) -> Self {
        self.guide_slope = Some(slope);
        self
    }

    pub fn title(mut self, title: &str) -> Self {
        self.title = title.into();
        self
    }
}

struct Line {
    label: String,
    points: Vec<(f64, f64)>,
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn cell_label(c: &Cell) -> String {
    match c {
        Cell::Num(v) => format_f64(*v),
        Cell::Text(s) => s.clone(),
    }
}

fn collect_lines(table: &ResultTable, plot: &LinePlot) -> Result<Vec<Line>> {
    let xi = table.column_index(&plot.x)?;
    let yis = plot.ys.iter().map(|y| table.column_index(y)).collect::<Result<Vec<_>>>()?;
    let si = plot.series_by.as_deref().map(|s| table.column_index(s)).transpose()?;
    // Series keep first-appearance order so output is stable.
    let mut order: Vec<String> = Vec::new();
    let mut groups: BTreeMap<(usize, usize), XGroups> = BTreeMap::new();
    for row in table.rows() {
        let key = si.map(|i| cell_label(&row[i])).unwrap_or_default();
        let s = match order.iter().position(|k| *k == key) {
            Some(p) => p,
            None => {
                order.push(key);
                order.len() - 1
            }
        };
        let x = row[xi].as_f64().ok_or_else(|| Error::Format(format!("column {:?} is not numeric", plot.x)))?;
        for (yk, &yi) in yis.iter().enumerate() {
            let y =
                row[yi].as_f64().ok_or_else(|| Error::Format(format!("column {:?} is not numeric", plot.ys[yk])))?;
            let ok = |v: f64, log: bool| v.is_finite() && (!log || v > 0.0);
            if ok(x, plot.log_x) && ok(y, plot.log_y) {
                groups.entry((s, yk)).or_default().entry(x.to_bits()).or_insert((x, Vec::new())).1.push(y);
            }
        }
    }
    let mut lines = Vec::new();
    for (s, key) in order.iter().enumerate() {
        for (yk, yname) in plot.ys.iter().enumerate() {
            let Some(g) = groups.remove(&(s, yk)) else { continue };
            let mut points: Vec<(f64, f64)> = g.into_values().map(|(x, mut ys)| (x, median(&mut ys))).collect();
            points.sort_by(|a, b| a.0.total_cmp(&b.0));
            let label = match (&plot.series_by, plot.ys.len()) {
                (None, _) => yname.clone(),
                (Some(col), 1) => format!("{col}={key}"),
                (Some(col), _) => format!("{yname} {col}={key}"),
            };
            lines.push(Line { label, points });
        }
    }
    Ok(lines)
}

struct Axis {
    lo: f64,
    hi: f64,
    log: bool,
}

impl Axis {
    fn new(values: impl Iterator<Item = f64>, log: bool) -> Self {
        let (mut lo, mut hi) = values
            .map(|v| if log { v.log10() } else { v })
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
        if !lo.is_finite() {
            (lo, hi) = (0.0, 1.0);
        }
        if log {
            lo = lo.floor();
            hi = hi.ceil();
        }
        if hi - lo < 1e-12 {
            lo -= 0.5;
            hi += 0.5;
        }
        Axis { lo, hi, log }
    }

    fn frac(&self, v: f64) -> f64 {
        let t = if self.log { v.log10() } else { v };
        (t - self.lo) / (self.hi - self.lo)
    }

    /// Tick positions (in data units) and labels.
    fn ticks(&self) -> Vec<(f64, String)> {
        if self.log {
            let span = (self.hi - self.lo) as i64;
            let step = (span / 8 + 1).max(1);
            (self.lo as i64..=self.hi as i64)
                .filter(|e| (e - self.lo as i64) % step == 0)
                .map(|e| (10f64.powi(e as i32), format!("1e{e}")))
                .collect()
        } else {
            let raw = (self.hi - self.lo) / 5.0;
            let mag = 10f64.powf(raw.log10().floor());
            let step = [1.0, 2.0, 5.0, 10.0].iter().map(|m| m * mag).find(|s| *s >= raw).unwrap_or(10.0 * mag);
            let first = (self.lo / step).ceil() as i64;
            let last = (self.hi / step).floor() as i64;
            (first..=last)
                .map(|k| {
                    let v = k as f64 * step;
                    (v, format!("{}", (v * 1e9).round() / 1e9))
                })
                .collect()
        }
    }
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Renders the plot; identical tables give identical bytes.
/// y values keyed by the bit pattern of x, kept with x itself.
type XGroups = BTreeMap<u64, (f64, Vec<f64>)>;

pub fn render_svg(table: &ResultTable, plot: &LinePlot) -> Result<String> {
    let lines = collect_lines(table, plot)?;
    let all = || lines.iter().flat_map(|l| l.points.iter());
    let ax = Axis::new(all().map(|p| p.0), plot.log_x);
    let ay = Axis::new(all().map(|p| p.1), plot.log_y);
    let pw = WIDTH - LEFT - RIGHT;
    let ph = HEIGHT - TOP - BOTTOM;
    let px = |x: f64| LEFT + ax.frac(x) * pw;
    let py = |y: f64| TOP + (1.0 - ay.frac(y)) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    if !plot.title.is_empty() {
        let _ = writeln!(s, r#"<text x="{LEFT}" y="20" font-size="13">{}</text>"#, esc(&plot.title));
    }
    let _ = writeln!(s, r##"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="#333"/>"##);
    for (v, label) in ax.ticks() {
        let x = px(v);
        let _ = writeln!(
            s,
            r##"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="#333"/>"##,
            TOP + ph,
            TOP + ph + 4.0
        );
        let _ =
            writeln!(s, r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, TOP + ph + 16.0, esc(&label));
    }
    for (v, label) in ay.ticks() {
        let y = py(v);
        let _ = writeln!(s, r##"<line x1="{:.2}" y1="{y:.2}" x2="{LEFT}" y2="{y:.2}" stroke="#333"/>"##, LEFT - 4.0);
        let _ =
            writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#, LEFT - 6.0, y + 4.0, esc(&label));
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        LEFT + pw / 2.0,
        HEIGHT - 8.0,
        esc(&plot.x)
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">{}</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0,
        esc(&plot.ys.join(", "))
    );
    let _ =
        writeln!(s, r#"<clipPath id="plot-area"><rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}"/></clipPath>"#);
    if let (Some(slope), Some(first)) = (plot.guide_slope, lines.iter().find(|l| !l.points.is_empty())) {
        // Guide through the centroid of the first line, in axis coordinates.
        let t = |v: f64, log: bool| if log { v.log10() } else { v };
        let n = first.points.len() as f64;
        let cx = first.points.iter().map(|p| t(p.0, plot.log_x)).sum::<f64>() / n;
        let cy = first.points.iter().map(|p| t(p.1, plot.log_y)).sum::<f64>() / n;
        let to_screen = |tx: f64| {
            let ty = cy + slope * (tx - cx);
            (LEFT + (tx - ax.lo) / (ax.hi - ax.lo) * pw, TOP + (1.0 - (ty - ay.lo) / (ay.hi - ay.lo)) * ph)
        };
        let (x1, y1) = to_screen(ax.lo);
        let (x2, y2) = to_screen(ax.hi);
        let _ = writeln!(
            s,
            r##"<line x1="{x1:.2}" y1="{y1:.2}" x2="{x2:.2}" y2="{y2:.2}" stroke="#777" stroke-dasharray="5 4" clip-path="url(#plot-area)"/>"##
        );
        let _ = writeln!(
            s,
            r##"<text x="{:.2}" y="{:.2}" fill="#777">slope {}</text>"##,
            LEFT + pw + 8.0,
            TOP + 14.0,
            format_f64(slope)
        );
    }
    for (k, line) in lines.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let pts: Vec<String> = line.points.iter().map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
        let _ =
            writeln!(s, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#, pts.join(" "));
        for &(x, y) in &line.points {
            let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="2" fill="{color}"/>"#, px(x), py(y));
        }
        let ly = TOP + 34.0 + 16.0 * k as f64;
        let _ = writeln!(
            s,
            r#"<line x1="{:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/>"#,
            LEFT + pw + 8.0,
            LEFT + pw + 24.0
        );
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}">{}</text>"#, LEFT + pw + 28.0, ly + 4.0, esc(&line.label));
    }
    s.push_str("</svg>\n");
    Ok(s)
}

pub fn emit_svg_lineplot(table: &ResultTable, plot: &LinePlot, path: &Path) -> Result<()> {
    let svg = render_svg(table, plot)?;
    std::fs::write(path, svg).map_err(|e| Error::io(path, e))
}
