//! Static SVG charts built from the run CSVs. Output depends only on the
//! input data, so re-plotting reproduces files byte for byte.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::tables::{CurvePoint, MetricsSeries};

const PANEL_W: f64 = 360.0;
const PANEL_H: f64 = 260.0;
const MARGIN_L: f64 = 58.0;
const MARGIN_R: f64 = 16.0;
const MARGIN_T: f64 = 34.0;
const MARGIN_B: f64 = 40.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Line {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    pub title: String,
    pub x_label: String,
    pub lines: Vec<Line>,
}

pub fn color(label: &str) -> &'static str {
    match label {
        "pspo" => "#1f77b4",
        "ppo_token" => "#ff7f0e",
        "gspo" => "#2ca02c",
        "pspo_star" => "#d62728",
        _ => "#7f7f7f",
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

fn bounds(lines: &[Line]) -> Option<(f64, f64, f64, f64)> {
    let mut it = lines
        .iter()
        .flat_map(|l| &l.points)
        .filter(|(x, y)| x.is_finite() && y.is_finite());
    let &(x0, y0) = it.next()?;
    let (mut x_min, mut x_max, mut y_min, mut y_max) = (x0, x0, y0, y0);
    for &(x, y) in it {
        x_min = x_min.min(x);
        x_max = x_max.max(x);
        y_min = y_min.min(y);
        y_max = y_max.max(y);
    }
    if x_max == x_min {
        x_max = x_min + 1.0;
    }
    if y_max == y_min {
        y_min -= 0.5;
        y_max += 0.5;
    }
    Some((x_min, x_max, y_min, y_max))
}

fn tick(v: f64) -> String {
    if v != 0.0 && (v.abs() >= 1e4 || v.abs() < 1e-2) {
        format!("{v:.1e}")
    } else {
        format!("{v:.2}")
    }
}

fn render_panel(out: &mut String, panel: &Panel, x_off: f64) {
    let (l, t) = (x_off + MARGIN_L, MARGIN_T);
    let (w, h) = (PANEL_W - MARGIN_L - MARGIN_R, PANEL_H - MARGIN_T - MARGIN_B);
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="20" font-size="13" text-anchor="middle">{}</text>"#,
        l + w / 2.0,
        escape(&panel.title)
    );
    let _ = writeln!(
        out,
        r##"<rect x="{l:.2}" y="{t:.2}" width="{w:.2}" height="{h:.2}" fill="none" stroke="#444"/>"##
    );
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" font-size="11" text-anchor="middle">{}</text>"#,
        l + w / 2.0,
        t + h + 32.0,
        escape(&panel.x_label)
    );
    let Some((x_min, x_max, y_min, y_max)) = bounds(&panel.lines) else {
        let _ = writeln!(
            out,
            r##"<text x="{:.2}" y="{:.2}" font-size="11" text-anchor="middle" fill="#888">no data</text>"##,
            l + w / 2.0,
            t + h / 2.0
        );
        return;
    };
    let sx = |x: f64| l + (x - x_min) / (x_max - x_min) * w;
    let sy = |y: f64| t + h - (y - y_min) / (y_max - y_min) * h;
    for (v, anchor, x, y) in [
        (x_min, "start", l, t + h + 14.0),
        (x_max, "end", l + w, t + h + 14.0),
    ] {
        let _ = writeln!(
            out,
            r#"<text x="{x:.2}" y="{y:.2}" font-size="10" text-anchor="{anchor}">{}</text>"#,
            tick(v)
        );
    }
    for v in [y_min, y_max] {
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" font-size="10" text-anchor="end">{}</text>"#,
            l - 4.0,
            sy(v) + 4.0,
            tick(v)
        );
    }
    for (i, line) in panel.lines.iter().enumerate() {
        // Non-finite values split the line into separate segments.
        let mut segments: Vec<Vec<(f64, f64)>> = vec![Vec::new()];
        for &(x, y) in &line.points {
            if x.is_finite() && y.is_finite() {
                segments.last_mut().expect("nonempty").push((sx(x), sy(y)));
            } else if !segments.last().expect("nonempty").is_empty() {
                segments.push(Vec::new());
            }
        }
        let drawn: Vec<_> = segments.into_iter().filter(|s| !s.is_empty()).collect();
        if drawn.is_empty() {
            continue;
        }
        let c = color(&line.label);
        for seg in drawn {
            let pts: Vec<String> = seg.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
            let _ = writeln!(
                out,
                r#"<polyline fill="none" stroke="{c}" stroke-width="1.5" points="{}"/>"#,
                pts.join(" ")
            );
        }
        let ly = t + 12.0 + 13.0 * i as f64;
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{ly:.2}" font-size="10" text-anchor="end" fill="{c}">{}</text>"#,
            l + w - 4.0,
            escape(&line.label)
        );
    }
}

/// Panels laid out left to right in one SVG document.
pub fn render_svg(panels: &[Panel]) -> String {
    let width = PANEL_W * panels.len().max(1) as f64;
    let mut out = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width:.0}\" height=\"{PANEL_H:.0}\" viewBox=\"0 0 {width:.0} {PANEL_H:.0}\" font-family=\"sans-serif\">\n"
    );
    out.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    for (i, p) in panels.iter().enumerate() {
        render_panel(&mut out, p, PANEL_W * i as f64);
    }
    out.push_str("</svg>\n");
    out
}

type Column = fn(&MetricsSeries) -> &[f64];

/// Per-step mean over seeds of one metric column, per algorithm. Non-finite
/// values are left out of the mean; a step with none left is NaN.
fn mean_by_algorithm(series: &[MetricsSeries], column: Column) -> Vec<Line> {
    let mut acc: BTreeMap<&str, BTreeMap<usize, (f64, usize)>> = BTreeMap::new();
    for s in series {
        let per_step = acc.entry(&s.algorithm).or_default();
        for (&step, &v) in s.steps.iter().zip(column(s)) {
            let e = per_step.entry(step).or_insert((0.0, 0));
            if v.is_finite() {
                e.0 += v;
                e.1 += 1;
            }
        }
    }
    acc.into_iter()
        .map(|(label, steps)| Line {
            label: label.to_string(),
            points: steps
                .into_iter()
                .map(|(step, (sum, n))| {
                    (step as f64, if n == 0 { f64::NAN } else { sum / n as f64 })
                })
                .collect(),
        })
        .collect()
}

/// Return, actor gradient norm and critic loss against training step.
pub fn training_panels(series: &[MetricsSeries]) -> Vec<Panel> {
    let columns: [(&str, Column); 3] = [
        ("mean return", |s| &s.mean_return),
        ("actor gradient norm", |s| &s.actor_grad_norm),
        ("critic loss", |s| &s.critic_loss),
    ];
    columns
        .into_iter()
        .map(|(title, column)| Panel {
            title: title.to_string(),
            x_label: "step".to_string(),
            lines: mean_by_algorithm(series, column),
        })
        .collect()
}

/// Mean recall against cumulative tool calls, per algorithm. Each episode
/// holds its last recall after its final call.
pub fn recall_panel(points: &[CurvePoint]) -> Panel {
    let mut episodes: BTreeMap<&str, BTreeMap<(u64, usize), Vec<(usize, f64)>>> = BTreeMap::new();
    for p in points {
        episodes
            .entry(&p.algorithm)
            .or_default()
            .entry((p.seed, p.query_id))
            .or_default()
            .push((p.calls, p.recall));
    }
    let lines = episodes
        .into_iter()
        .map(|(label, eps)| {
            let max_calls = eps
                .values()
                .flat_map(|c| c.iter().map(|p| p.0))
                .max()
                .unwrap_or(0);
            let points = (0..=max_calls)
                .map(|c| {
                    let total: f64 = eps
                        .values()
                        .map(|curve| {
                            curve
                                .iter()
                                .take_while(|p| p.0 <= c)
                                .last()
                                .map_or(0.0, |p| p.1)
                        })
                        .sum();
                    (c as f64, total / eps.len() as f64)
                })
                .collect();
            Line {
                label: label.to_string(),
                points,
            }
        })
        .collect();
    Panel {
        title: "recall vs tool calls".to_string(),
        x_label: "cumulative tool calls".to_string(),
        lines,
    }
}
