//! Deterministic SVG rendering of metrics logs, interpolation curves, loss surfaces and
//! Hessian spectra, plus parsers for the CSV artifacts they are drawn from.

use std::fmt::Write as _;

use crate::experiment::MetricsRow;
use crate::landscape::{DirectionNormalization, InterpolationCurve, LossGrid, SpectrumEstimate};
use crate::{Error, Result};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;
const TICKS: usize = 5;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinePlot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    /// Plot `log10(y)`; non-positive values are dropped.
    pub log_y: bool,
    pub series: Vec<Series>,
}

/// Which metrics column a plot draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricField {
    TrainLoss,
    SwEma,
    SwRaw,
    Beta1,
    Lr,
    Gamma,
}

impl MetricField {
    pub fn parse(name: &str) -> Result<Self> {
        Ok(match name {
            "train_loss" => Self::TrainLoss,
            "sw_ema" => Self::SwEma,
            "sw_raw" => Self::SwRaw,
            "beta1" => Self::Beta1,
            "lr" => Self::Lr,
            "gamma" => Self::Gamma,
            other => {
                return Err(Error::InvalidConfig(format!("unknown metrics field {other:?}")))
            }
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::TrainLoss => "train_loss",
            Self::SwEma => "sw_ema",
            Self::SwRaw => "sw_raw",
            Self::Beta1 => "beta1",
            Self::Lr => "lr",
            Self::Gamma => "gamma",
        }
    }

    fn get(self, r: &MetricsRow) -> Option<f64> {
        match self {
            Self::TrainLoss => Some(r.train_loss),
            Self::SwEma => Some(r.sw_ema),
            Self::SwRaw => r.sw_raw,
            Self::Beta1 => Some(r.beta1),
            Self::Lr => Some(r.lr),
            Self::Gamma => r.gamma,
        }
    }
}

/// One series per named run, against iteration. Runs with an empty log are skipped.
pub fn metrics_plot(runs: &[(String, Vec<MetricsRow>)], field: MetricField, log_y: bool) -> LinePlot {
    LinePlot {
        title: field.name().to_string(),
        x_label: "iteration".into(),
        y_label: field.name().into(),
        log_y,
        series: runs
            .iter()
            .filter(|(_, rows)| !rows.is_empty())
            .map(|(name, rows)| Series {
                name: name.clone(),
                points: rows
                    .iter()
                    .filter_map(|r| field.get(r).map(|y| (r.iteration as f64, y)))
                    .collect(),
            })
            .collect(),
    }
}

pub fn curve_plot(curves: &[(String, InterpolationCurve)]) -> LinePlot {
    LinePlot {
        title: "1D interpolation".into(),
        x_label: "alpha".into(),
        y_label: "loss".into(),
        log_y: false,
        series: curves
            .iter()
            .map(|(name, c)| Series {
                name: name.clone(),
                points: c.alphas.iter().copied().zip(c.losses.iter().copied()).collect(),
            })
            .collect(),
    }
}

fn fmt(v: f64) -> String {
    format!("{v:.2}")
}

fn tick_label(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if v.abs() >= 1e4 || v.abs() < 1e-2 {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        (0.0, 1.0)
    } else if lo == hi {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
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

fn header(out: &mut String, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#,
        w = WIDTH,
        h = HEIGHT
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
        fmt((LEFT + WIDTH - RIGHT) / 2.0),
        escape(title)
    );
}

fn axes(out: &mut String, f: &Frame, x_label: &str, y_label: &str, y_is_log: bool) {
    let (x0, x1) = (LEFT, WIDTH - RIGHT);
    let (y0, y1) = (HEIGHT - BOTTOM, TOP);
    let _ = writeln!(
        out,
        r#"<g class="axes" stroke="black" fill="none"><line x1="{a}" y1="{b}" x2="{c}" y2="{b}"/><line x1="{a}" y1="{b}" x2="{a}" y2="{d}"/></g>"#,
        a = fmt(x0),
        b = fmt(y0),
        c = fmt(x1),
        d = fmt(y1)
    );
    for i in 0..TICKS {
        let s = i as f64 / (TICKS - 1) as f64;
        let xv = f.x.0 + s * (f.x.1 - f.x.0);
        let yv = f.y.0 + s * (f.y.1 - f.y.0);
        let ylabel = if y_is_log { format!("1e{yv:.1}") } else { tick_label(yv) };
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            fmt(f.px(xv)),
            fmt(y0 + 16.0),
            tick_label(xv)
        );
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#,
            fmt(x0 - 6.0),
            fmt(f.py(yv) + 4.0),
            ylabel
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        fmt((x0 + x1) / 2.0),
        fmt(HEIGHT - 12.0),
        escape(x_label)
    );
    let _ = writeln!(
        out,
        r#"<text x="16" y="{y}" text-anchor="middle" transform="rotate(-90 16 {y})">{}</text>"#,
        escape(y_label),
        y = fmt((y0 + y1) / 2.0)
    );
}

impl LinePlot {
    fn transformed(&self) -> Vec<Vec<(f64, f64)>> {
        self.series
            .iter()
            .map(|s| {
                s.points
                    .iter()
                    .filter(|(x, y)| x.is_finite() && y.is_finite() && (!self.log_y || *y > 0.0))
                    .map(|&(x, y)| (x, if self.log_y { y.log10() } else { y }))
                    .collect()
            })
            .collect()
    }

    pub fn to_svg(&self) -> String {
        let pts = self.transformed();
        let frame = Frame {
            x: range(pts.iter().flatten().map(|p| p.0)),
            y: range(pts.iter().flatten().map(|p| p.1)),
        };
        let mut out = String::new();
        header(&mut out, &self.title);
        axes(&mut out, &frame, &self.x_label, &self.y_label, self.log_y);
        for (k, (series, points)) in self.series.iter().zip(&pts).enumerate() {
            let color = PALETTE[k % PALETTE.len()];
            let path: Vec<String> = points
                .iter()
                .map(|&(x, y)| format!("{},{}", fmt(frame.px(x)), fmt(frame.py(y))))
                .collect();
            let _ = writeln!(
                out,
                r#"<polyline class="series" fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
                path.join(" ")
            );
            let ly = TOP + 10.0 + 18.0 * k as f64;
            let lx = WIDTH - RIGHT + 12.0;
            let _ = writeln!(
                out,
                r#"<g class="legend"><line x1="{}" y1="{y}" x2="{}" y2="{y}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">{}</text></g>"#,
                fmt(lx),
                fmt(lx + 18.0),
                fmt(lx + 24.0),
                fmt(ly + 4.0),
                escape(&series.name),
                y = fmt(ly)
            );
        }
        out.push_str("</svg>\n");
        out
    }
}

fn heat_color(s: f64) -> String {
    // Blue (low) to yellow (high).
    let s = s.clamp(0.0, 1.0);
    let r = (68.0 + s * (253.0 - 68.0)).round() as u8;
    let g = (1.0 + s * (231.0 - 1.0)).round() as u8;
    let b = (84.0 + s * (37.0 - 84.0)).round() as u8;
    format!("#{r:02x}{g:02x}{b:02x}")
}

pub fn heatmap_svg(title: &str, grid: &LossGrid) -> String {
    let frame = Frame {
        x: range(grid.us.iter().copied()),
        y: range(grid.vs.iter().copied()),
    };
    let (lo, hi) = range(grid.losses.iter().flatten().copied());
    let mut out = String::new();
    header(&mut out, title);
    let nu = grid.us.len().max(1) as f64;
    let nv = grid.vs.len().max(1) as f64;
    let cw = (WIDTH - LEFT - RIGHT) / nu;
    let ch = (HEIGHT - TOP - BOTTOM) / nv;
    for (i, row) in grid.losses.iter().enumerate() {
        for (j, &l) in row.iter().enumerate() {
            let _ = writeln!(
                out,
                r#"<rect x="{}" y="{}" width="{}" height="{}" fill="{}"/>"#,
                fmt(LEFT + i as f64 * cw),
                fmt(HEIGHT - BOTTOM - (j as f64 + 1.0) * ch),
                fmt(cw),
                fmt(ch),
                heat_color((l - lo) / (hi - lo))
            );
        }
    }
    axes(&mut out, &frame, "u", "v", false);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}">loss {} .. {}</text>"#,
        fmt(WIDTH - RIGHT + 12.0),
        fmt(TOP + 14.0),
        tick_label(lo),
        tick_label(hi)
    );
    out.push_str("</svg>\n");
    out
}

/// Ritz values as stems whose heights are their quadrature weights.
pub fn spectrum_svg(title: &str, spectra: &[(String, SpectrumEstimate)]) -> String {
    let frame = Frame {
        x: range(spectra.iter().flat_map(|(_, s)| s.ritz_values.iter().copied())),
        y: (0.0, range(spectra.iter().flat_map(|(_, s)| s.weights.iter().copied())).1.max(1e-12)),
    };
    let mut out = String::new();
    header(&mut out, title);
    axes(&mut out, &frame, "eigenvalue", "weight", false);
    for (k, (name, s)) in spectra.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        for (&l, &w) in s.ritz_values.iter().zip(&s.weights) {
            let _ = writeln!(
                out,
                r#"<line x1="{x}" y1="{}" x2="{x}" y2="{}" stroke="{color}"/>"#,
                fmt(frame.py(0.0)),
                fmt(frame.py(w)),
                x = fmt(frame.px(l))
            );
        }
        let ly = TOP + 10.0 + 18.0 * k as f64;
        let _ = writeln!(
            out,
            r#"<g class="legend"><rect x="{}" y="{}" width="12" height="8" fill="{color}"/><text x="{}" y="{}">{} (max {})</text></g>"#,
            fmt(WIDTH - RIGHT + 12.0),
            fmt(ly - 4.0),
            fmt(WIDTH - RIGHT + 30.0),
            fmt(ly + 4.0),
            escape(name),
            tick_label(s.lambda1)
        );
    }
    out.push_str("</svg>\n");
    out
}

fn csv_rows<'a>(
    text: &'a str,
    source_name: &'a str,
    header: &'a [&'a str],
) -> Result<impl Iterator<Item = Result<(usize, Vec<f64>)>> + 'a> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let err = |line: usize, message: String| Error::Parse {
        source_name: source_name.to_string(),
        line,
        message,
    };
    match lines.next() {
        Some((_, h)) if h.trim().split(',').map(str::trim).eq(header.iter().copied()) => {}
        Some((i, h)) => {
            return Err(err(i + 1, format!("expected header {:?}, found {h:?}", header.join(","))))
        }
        None => return Err(err(1, format!("missing header {:?}", header.join(",")))),
    }
    Ok(lines.map(move |(i, l)| {
        let cells: Vec<&str> = l.split(',').map(str::trim).collect();
        if cells.len() != header.len() {
            return Err(err(i + 1, format!("expected {} fields, found {}", header.len(), cells.len())));
        }
        cells
            .iter()
            .zip(header)
            .map(|(c, name)| {
                c.parse::<f64>()
                    .map_err(|e| err(i + 1, format!("field {name}: {c:?} is not a number ({e})")))
            })
            .collect::<Result<Vec<f64>>>()
            .map(|v| (i + 1, v))
    }))
}

/// Parses the `alpha,loss` CSV written by [`InterpolationCurve::to_csv`].
pub fn parse_curve_csv(text: &str, source_name: &str) -> Result<InterpolationCurve> {
    let mut alphas = Vec::new();
    let mut losses = Vec::new();
    for row in csv_rows(text, source_name, &["alpha", "loss"])? {
        let (_, v) = row?;
        alphas.push(v[0]);
        losses.push(v[1]);
    }
    Ok(InterpolationCurve {
        alphas,
        losses,
        timestep_filter: None,
    })
}

/// Parses the `u,v,loss` CSV written by [`LossGrid::to_csv`] (row-major in `u`).
pub fn parse_grid_csv(text: &str, source_name: &str) -> Result<LossGrid> {
    let mut cells = Vec::new();
    for row in csv_rows(text, source_name, &["u", "v", "loss"])? {
        cells.push(row?);
    }
    let mut us: Vec<f64> = Vec::new();
    let mut vs: Vec<f64> = Vec::new();
    for (_, c) in &cells {
        if !us.contains(&c[0]) {
            us.push(c[0]);
        }
        if !vs.contains(&c[1]) {
            vs.push(c[1]);
        }
    }
    let mut losses = vec![vec![f64::NAN; vs.len()]; us.len()];
    for (k, (line, c)) in cells.iter().enumerate() {
        let (i, j) = (k / vs.len().max(1), k % vs.len().max(1));
        if us.get(i) != Some(&c[0]) || vs.get(j) != Some(&c[1]) {
            return Err(Error::Parse {
                source_name: source_name.to_string(),
                line: *line,
                message: "grid cells are not in row-major (u, v) order".into(),
            });
        }
        losses[i][j] = c[2];
    }
    if cells.len() != us.len() * vs.len() {
        return Err(Error::Parse {
            source_name: source_name.to_string(),
            line: cells.last().map_or(1, |c| c.0),
            message: format!("expected {} cells, found {}", us.len() * vs.len(), cells.len()),
        });
    }
    Ok(LossGrid {
        us,
        vs,
        losses,
        normalization: DirectionNormalization::default(),
        timestep_filter: None,
    })
}

pub fn parse_spectrum_json(text: &str, source_name: &str) -> Result<SpectrumEstimate> {
    serde_json::from_str(text).map_err(|e| Error::Parse {
        source_name: source_name.to_string(),
        line: e.line(),
        message: e.to_string(),
    })
}
