//! Self-contained SVG line charts and the data files behind them.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use adacrit_core::Trace;

use crate::error::HarnessError;
use crate::trace_io::{fmt_f64, write_file};

const PANEL_W: f64 = 420.0;
const PANEL_H: f64 = 320.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 15.0;
const MARGIN_T: f64 = 30.0;
const MARGIN_B: f64 = 45.0;
const LEGEND_ROW: f64 = 18.0;
const COLORS: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    pub title: String,
    pub y_label: String,
    pub log_y: bool,
    pub series: Vec<Series>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Figure {
    pub title: String,
    pub panels: Vec<Panel>,
}

/// Which trace column a panel shows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Column {
    Loss,
    TestLoss,
    GradNorm,
    LambdaMin,
}

impl Column {
    pub fn extract(self, trace: &Trace) -> Vec<(f64, f64)> {
        trace
            .rows
            .iter()
            .filter_map(|r| {
                let v = match self {
                    Column::Loss => Some(r.f),
                    Column::TestLoss => r.f_test,
                    Column::GradNorm => Some(r.grad_norm),
                    Column::LambdaMin => r.lambda_min,
                };
                v.map(|v| (r.t as f64, v))
            })
            .collect()
    }

    pub fn panel(self, runs: &[(String, &Trace)]) -> Panel {
        let (title, y_label, log_y) = match self {
            Column::Loss => ("training loss", "f(x_t)", true),
            Column::TestLoss => ("test loss", "test loss", true),
            Column::GradNorm => ("gradient norm", "|grad f(x_t)|", true),
            Column::LambdaMin => ("smallest Hessian eigenvalue", "lambda_min", false),
        };
        Panel {
            title: title.into(),
            y_label: y_label.into(),
            log_y,
            series: runs
                .iter()
                .map(|(label, t)| Series {
                    label: label.clone(),
                    points: self.extract(t),
                })
                .collect(),
        }
    }
}

fn nice_ticks(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if !(hi > lo) {
        return vec![lo];
    }
    let raw = (hi - lo) / n as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| *s >= raw)
        .unwrap_or(10.0 * mag);
    let first = (lo / step).ceil() as i64;
    let last = (hi / step).floor() as i64;
    (first..=last).map(|k| k as f64 * step).collect()
}

fn label_num(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if v.abs() >= 1e4 || v.abs() < 1e-2 {
        format!("{v:.0e}")
    } else {
        let s = format!("{v:.3}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn draw_panel(svg: &mut String, p: &Panel, ox: f64, oy: f64) {
    let (x0, x1) = (ox + MARGIN_L, ox + PANEL_W - MARGIN_R);
    let (y0, y1) = (oy + PANEL_H - MARGIN_B, oy + MARGIN_T);
    let ty = |v: f64| if p.log_y { v.log10() } else { v };
    let pts: Vec<Vec<(f64, f64)>> = p
        .series
        .iter()
        .map(|s| {
            s.points
                .iter()
                .copied()
                .filter(|(x, y)| x.is_finite() && y.is_finite() && (!p.log_y || *y > 0.0))
                .map(|(x, y)| (x, ty(y)))
                .collect()
        })
        .collect();
    let all = pts.iter().flatten();
    let (mut xmin, mut xmax, mut ymin, mut ymax) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in all {
        xmin = xmin.min(x);
        xmax = xmax.max(x);
        ymin = ymin.min(y);
        ymax = ymax.max(y);
    }
    if !xmin.is_finite() {
        (xmin, xmax, ymin, ymax) = (0.0, 1.0, 0.0, 1.0);
    }
    if xmax <= xmin {
        xmax = xmin + 1.0;
    }
    if ymax <= ymin {
        ymin -= 0.5;
        ymax += 0.5;
    }
    if p.log_y {
        ymin = ymin.floor();
        ymax = ymax.ceil().max(ymin + 1.0);
    } else {
        let pad = 0.05 * (ymax - ymin);
        ymin -= pad;
        ymax += pad;
    }
    let sx = |x: f64| x0 + (x - xmin) / (xmax - xmin) * (x1 - x0);
    let sy = |y: f64| y0 - (y - ymin) / (ymax - ymin) * (y0 - y1);

    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-size="14">{}</text>"#,
        (x0 + x1) / 2.0,
        oy + 18.0,
        esc(&p.title)
    );
    let _ = writeln!(
        svg,
        r##"<rect x="{x0:.1}" y="{y1:.1}" width="{:.1}" height="{:.1}" fill="none" stroke="#444"/>"##,
        x1 - x0,
        y0 - y1
    );
    for t in nice_ticks(xmin, xmax, 5) {
        let x = sx(t);
        let _ = writeln!(
            svg,
            r##"<line x1="{x:.1}" y1="{y0:.1}" x2="{x:.1}" y2="{:.1}" stroke="#444"/><text x="{x:.1}" y="{:.1}" text-anchor="middle" font-size="11">{}</text>"##,
            y0 + 4.0,
            y0 + 16.0,
            label_num(t)
        );
    }
    let yticks: Vec<f64> = if p.log_y {
        let step = ((ymax - ymin) / 6.0).ceil().max(1.0);
        let mut v = Vec::new();
        let mut k = ymin;
        while k <= ymax + 1e-9 {
            v.push(k);
            k += step;
        }
        v
    } else {
        nice_ticks(ymin, ymax, 5)
    };
    for t in yticks {
        let y = sy(t);
        let label = if p.log_y { format!("1e{}", t as i64) } else { label_num(t) };
        let _ = writeln!(
            svg,
            r##"<line x1="{:.1}" y1="{y:.1}" x2="{x0:.1}" y2="{y:.1}" stroke="#444"/><line x1="{x0:.1}" y1="{y:.1}" x2="{x1:.1}" y2="{y:.1}" stroke="#ddd"/><text x="{:.1}" y="{:.1}" text-anchor="end" font-size="11">{label}</text>"##,
            x0 - 4.0,
            x0 - 6.0,
            y + 4.0
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-size="12">t</text>"#,
        (x0 + x1) / 2.0,
        y0 + 34.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-size="12" transform="rotate(-90 {:.1} {:.1})">{}</text>"#,
        ox + 16.0,
        (y0 + y1) / 2.0,
        ox + 16.0,
        (y0 + y1) / 2.0,
        esc(&p.y_label)
    );
    for (i, s) in pts.iter().enumerate() {
        if s.is_empty() {
            continue;
        }
        let path: Vec<String> = s.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
        let _ = writeln!(
            svg,
            r#"<polyline class="series" fill="none" stroke="{}" stroke-width="1.5" points="{}"/>"#,
            COLORS[i % COLORS.len()],
            path.join(" ")
        );
    }
}

pub fn render_svg(fig: &Figure) -> String {
    let labels: Vec<&str> = {
        let mut v: Vec<&str> = Vec::new();
        for s in fig.panels.iter().flat_map(|p| &p.series) {
            if !v.contains(&s.label.as_str()) {
                v.push(&s.label);
            }
        }
        v
    };
    let width = PANEL_W * fig.panels.len().max(1) as f64;
    let height = 30.0 + PANEL_H + 10.0 + LEGEND_ROW * labels.len() as f64;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}" font-family="sans-serif">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="20" text-anchor="middle" font-size="16">{}</text>"#,
        width / 2.0,
        esc(&fig.title)
    );
    for (k, p) in fig.panels.iter().enumerate() {
        let _ = writeln!(svg, r#"<g class="panel">"#);
        draw_panel(&mut svg, p, k as f64 * PANEL_W, 30.0);
        let _ = writeln!(svg, "</g>");
    }
    for (i, l) in labels.iter().enumerate() {
        let y = 30.0 + PANEL_H + 10.0 + LEGEND_ROW * i as f64;
        let c = fig
            .panels
            .iter()
            .find_map(|p| p.series.iter().position(|s| s.label == *l))
            .unwrap_or(i);
        let _ = writeln!(
            svg,
            r#"<line x1="{:.1}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="{}" stroke-width="2"/><text x="{:.1}" y="{:.1}" font-size="12">{}</text>"#,
            MARGIN_L,
            MARGIN_L + 30.0,
            COLORS[c % COLORS.len()],
            MARGIN_L + 36.0,
            y + 4.0,
            esc(l)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

/// Long-format data behind a figure: `panel,series,t,value`.
pub fn figure_data_csv(fig: &Figure) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["panel", "series", "t", "value"]).expect("in-memory write");
    for p in &fig.panels {
        for s in &p.series {
            for &(t, v) in &s.points {
                w.write_record([p.title.as_str(), s.label.as_str(), &format!("{t}"), &fmt_f64(v)])
                    .expect("in-memory write");
            }
        }
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 output")
}

/// Writes `<stem>.svg` and `<stem>.csv`; returns the SVG path.
pub fn write_figure(dir: &Path, stem: &str, fig: &Figure) -> Result<PathBuf, HarnessError> {
    let svg = dir.join(format!("{stem}.svg"));
    write_file(&svg, render_svg(fig).as_bytes())?;
    write_file(&dir.join(format!("{stem}.csv")), figure_data_csv(fig).as_bytes())?;
    Ok(svg)
}
