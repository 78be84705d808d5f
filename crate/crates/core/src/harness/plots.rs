//! SVG charts plus the CSV tables they are drawn from. Every plotted number
//! is copied from a metrics log; nothing is smoothed or re-derived.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::trainer::IterationMetrics;

const W: f64 = 640.0;
const H: f64 = 360.0;
const PAD: f64 = 48.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

pub fn load_metrics(path: &Path) -> Result<Vec<IterationMetrics>> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let m: IterationMetrics = serde_json::from_str(&line).map_err(|e| Error::Malformed {
            path: path.to_path_buf(),
            reason: format!("line {}: {e}", i + 1),
        })?;
        out.push(m);
    }
    if out.is_empty() {
        return Err(Error::Malformed {
            path: path.to_path_buf(),
            reason: "empty metrics log".into(),
        });
    }
    Ok(out)
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn x(&self, v: f64) -> f64 {
        let span = if self.x1 > self.x0 { self.x1 - self.x0 } else { 1.0 };
        PAD + (v - self.x0) / span * (W - 2.0 * PAD)
    }
    fn y(&self, v: f64) -> f64 {
        let span = if self.y1 > self.y0 { self.y1 - self.y0 } else { 1.0 };
        H - PAD - (v - self.y0) / span * (H - 2.0 * PAD)
    }
}

fn header(svg: &mut String, title: &str, f: &Frame) {
    let _ = write!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">
<rect width="{W}" height="{H}" fill="white"/>
<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>
<line x1="{PAD}" y1="{}" x2="{}" y2="{}" stroke="black"/>
<line x1="{PAD}" y1="{PAD}" x2="{PAD}" y2="{}" stroke="black"/>
<text x="{}" y="{}" text-anchor="end">{}</text>
<text x="{}" y="{}" text-anchor="end">{}</text>
"#,
        W / 2.0,
        escape(title),
        H - PAD,
        W - PAD,
        H - PAD,
        H - PAD,
        PAD - 4.0,
        H - PAD,
        f.y0,
        PAD - 4.0,
        PAD + 4.0,
        f.y1,
    );
}

fn legend(svg: &mut String, names: &[&str]) {
    for (i, n) in names.iter().enumerate() {
        let y = PAD + 14.0 * i as f64;
        let _ = writeln!(
            svg,
            r#"<rect x="{}" y="{}" width="10" height="10" fill="{}"/><text x="{}" y="{}">{}</text>"#,
            W - PAD - 150.0,
            y - 9.0,
            COLORS[i % COLORS.len()],
            W - PAD - 136.0,
            y,
            escape(n)
        );
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Similarity reward, answer reward and eval accuracy against iteration.
/// Writes `<stem>.svg` and `<stem>.csv`; returns both paths.
pub fn run_curves(metrics: &[IterationMetrics], title: &str, dir: &Path, stem: &str) -> Result<(PathBuf, PathBuf)> {
    let mut csv = String::from("iter,mean_similarity_reward,mean_answer_reward,eval_accuracy\n");
    for m in metrics {
        let _ = writeln!(
            csv,
            "{},{},{},{}",
            m.iter,
            m.mean_similarity_reward,
            m.mean_answer_reward,
            opt(m.eval_accuracy)
        );
    }
    let last = metrics.last().map_or(0, |m| m.iter) as f64;
    let f = Frame { x0: 0.0, x1: last, y0: 0.0, y1: 1.0 };
    let mut svg = String::new();
    header(&mut svg, title, &f);
    let series: [(&str, Box<dyn Fn(&IterationMetrics) -> Option<f64>>); 3] = [
        ("similarity reward", Box::new(|m| Some(m.mean_similarity_reward))),
        ("answer reward", Box::new(|m| Some(m.mean_answer_reward))),
        ("eval accuracy", Box::new(|m| m.eval_accuracy)),
    ];
    for (i, (name, get)) in series.iter().enumerate() {
        let pts: Vec<(f64, f64)> = metrics.iter().filter_map(|m| get(m).map(|v| (m.iter as f64, v))).collect();
        let path: Vec<String> = pts.iter().map(|(x, y)| format!("{:.2},{:.2}", f.x(*x), f.y(*y))).collect();
        let _ = writeln!(
            svg,
            r#"<polyline class="series" data-name="{name}" fill="none" stroke="{}" stroke-width="1.2" points="{}"/>"#,
            COLORS[i],
            path.join(" ")
        );
        if i == 2 {
            for (x, y) in &pts {
                let _ = writeln!(
                    svg,
                    r#"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="{}" data-iter="{x}" data-value="{y}"/>"#,
                    f.x(*x),
                    f.y(*y),
                    COLORS[i]
                );
            }
        }
    }
    legend(&mut svg, &["similarity reward", "answer reward", "eval accuracy"]);
    svg.push_str("</svg>\n");
    let (svg_path, csv_path) = (dir.join(format!("{stem}.svg")), dir.join(format!("{stem}.csv")));
    std::fs::write(&svg_path, svg)?;
    std::fs::write(&csv_path, csv)?;
    Ok((svg_path, csv_path))
}

/// Grouped bars: one group per label, one bar per series.
pub fn grouped_bars(title: &str, labels: &[String], series: &[(&str, Vec<f64>)], dir: &Path, stem: &str) -> Result<(PathBuf, PathBuf)> {
    let mut csv = String::from("label");
    for (name, _) in series {
        let _ = write!(csv, ",{name}");
    }
    csv.push('\n');
    for (i, l) in labels.iter().enumerate() {
        csv.push_str(l);
        for (_, vals) in series {
            let _ = write!(csv, ",{}", vals[i]);
        }
        csv.push('\n');
    }
    let ymax = series.iter().flat_map(|(_, v)| v.iter().copied()).fold(1.0f64, f64::max);
    let f = Frame { x0: 0.0, x1: labels.len() as f64, y0: 0.0, y1: ymax };
    let mut svg = String::new();
    header(&mut svg, title, &f);
    let group_w = (W - 2.0 * PAD) / labels.len().max(1) as f64;
    let bar_w = group_w * 0.8 / series.len().max(1) as f64;
    for (i, l) in labels.iter().enumerate() {
        let gx = f.x(i as f64) + group_w * 0.1;
        for (s, (name, vals)) in series.iter().enumerate() {
            let v = vals[i];
            let y = f.y(v);
            let _ = writeln!(
                svg,
                r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{}" data-label="{}" data-series="{name}" data-value="{v}"/>"#,
                gx + bar_w * s as f64,
                y,
                bar_w,
                (H - PAD - y).max(0.0),
                COLORS[s % COLORS.len()],
                escape(l)
            );
        }
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{}" text-anchor="middle">{}</text>"#,
            gx + group_w * 0.4,
            H - PAD + 14.0,
            escape(l)
        );
    }
    let names: Vec<&str> = series.iter().map(|(n, _)| *n).collect();
    legend(&mut svg, &names);
    svg.push_str("</svg>\n");
    let (svg_path, csv_path) = (dir.join(format!("{stem}.svg")), dir.join(format!("{stem}.csv")));
    std::fs::write(&svg_path, svg)?;
    std::fs::write(&csv_path, csv)?;
    Ok((svg_path, csv_path))
}

/// One line of `y` against numeric `x`.
pub fn line(title: &str, x_name: &str, y_name: &str, points: &[(f64, f64)], dir: &Path, stem: &str) -> Result<(PathBuf, PathBuf)> {
    let mut csv = format!("{x_name},{y_name}\n");
    for (x, y) in points {
        let _ = writeln!(csv, "{x},{y}");
    }
    let x0 = points.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let x1 = points.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    let y1 = points.iter().map(|p| p.1).fold(1.0f64, f64::max);
    let f = Frame { x0, x1, y0: 0.0, y1 };
    let mut svg = String::new();
    header(&mut svg, title, &f);
    let path: Vec<String> = points.iter().map(|(x, y)| format!("{:.2},{:.2}", f.x(*x), f.y(*y))).collect();
    let _ = writeln!(
        svg,
        r#"<polyline fill="none" stroke="{}" stroke-width="1.5" points="{}"/>"#,
        COLORS[0],
        path.join(" ")
    );
    for (x, y) in points {
        let _ = writeln!(
            svg,
            r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{}" data-x="{x}" data-value="{y}"/><text x="{:.2}" y="{}" text-anchor="middle">{x}</text>"#,
            f.x(*x),
            f.y(*y),
            COLORS[0],
            f.x(*x),
            H - PAD + 14.0
        );
    }
    legend(&mut svg, &[y_name]);
    svg.push_str("</svg>\n");
    let (svg_path, csv_path) = (dir.join(format!("{stem}.svg")), dir.join(format!("{stem}.csv")));
    std::fs::write(&svg_path, svg)?;
    std::fs::write(&csv_path, csv)?;
    Ok((svg_path, csv_path))
}
