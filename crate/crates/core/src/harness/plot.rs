//! Figure export: disparity boxplots, the disparity/reward Pareto front and
//! training curves, each as a standalone SVG next to the CSV it was drawn
//! from.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::output::median;
use super::run::RunRecord;
use crate::error::{Error, Result};

const W: f64 = 720.0;
const H: f64 = 440.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 110.0;

/// Maps data ranges onto the plot area.
struct Frame {
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn new(x: (f64, f64), y: (f64, f64)) -> Self {
        let pad = |(lo, hi): (f64, f64)| {
            if (hi - lo).abs() < 1e-12 {
                (lo - 0.5, hi + 0.5)
            } else {
                let m = 0.05 * (hi - lo);
                (lo - m, hi + m)
            }
        };
        Self { x: pad(x), y: pad(y) }
    }

    fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.x.0) / (self.x.1 - self.x.0) * (W - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        H - BOTTOM - (y - self.y.0) / (self.y.1 - self.y.0) * (H - TOP - BOTTOM)
    }
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn svg_open(title: &str, x_label: &str, y_label: &str, frame: &Frame) -> String {
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="11">"#);
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="18" text-anchor="middle" font-size="14">{}</text>"#, W / 2.0, escape(title));
    let (x0, x1, y0, y1) = (LEFT, W - RIGHT, TOP, H - BOTTOM);
    let _ = writeln!(s, r#"<path d="M{x0} {y0}V{y1}H{x1}" fill="none" stroke="black"/>"#);
    for i in 0..=4 {
        let v = frame.y.0 + (frame.y.1 - frame.y.0) * i as f64 / 4.0;
        let y = frame.py(v);
        let _ = writeln!(s, r##"<line x1="{}" y1="{y:.1}" x2="{x0}" y2="{y:.1}" stroke="black"/><text x="{}" y="{:.1}" text-anchor="end">{v:.3}</text>"##, x0 - 4.0, x0 - 6.0, y + 4.0);
    }
    let _ = writeln!(s, r#"<text x="16" y="{}" transform="rotate(-90 16 {})" text-anchor="middle">{}</text>"#, (y0 + y1) / 2.0, (y0 + y1) / 2.0, escape(y_label));
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, (x0 + x1) / 2.0, H - 8.0, escape(x_label));
    s
}

fn x_ticks(s: &mut String, frame: &Frame) {
    for i in 0..=4 {
        let v = frame.x.0 + (frame.x.1 - frame.x.0) * i as f64 / 4.0;
        let x = frame.px(v);
        let _ = writeln!(s, r#"<text x="{x:.1}" y="{}" text-anchor="middle">{v:.3}</text>"#, H - BOTTOM + 16.0);
    }
}

const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Per-configuration evaluation disparities in record order of first
/// appearance.
fn by_label(records: &[RunRecord]) -> Vec<(String, Vec<&RunRecord>)> {
    let mut order: Vec<(String, Vec<&RunRecord>)> = Vec::new();
    for r in records {
        match order.iter_mut().find(|(l, _)| *l == r.label) {
            Some((_, v)) => v.push(r),
            None => order.push((r.label.clone(), vec![r])),
        }
    }
    order
}

fn quartiles(values: &[f64]) -> (f64, f64, f64, f64, f64) {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let q = |p: f64| {
        let pos = p * (v.len() - 1) as f64;
        let (i, f) = (pos.floor() as usize, pos.fract());
        if i + 1 < v.len() {
            v[i] + f * (v[i + 1] - v[i])
        } else {
            v[i]
        }
    };
    (v[0], q(0.25), q(0.5), q(0.75), v[v.len() - 1])
}

fn boxplot(dir: &Path, records: &[RunRecord]) -> Result<Vec<PathBuf>> {
    let groups = by_label(records);
    let rows: Vec<Vec<String>> = records
        .iter()
        .map(|r| vec![r.label.clone(), r.seed.to_string(), r.summary.dp.to_string()])
        .collect();
    let csv_path = dir.join("disparity_boxplot.csv");
    write_csv(&csv_path, &["label", "seed", "dp"], &rows)?;

    let frame = Frame::new((0.0, groups.len() as f64), range(records.iter().map(|r| r.summary.dp)));
    let mut s = svg_open("Demographic disparity by configuration", "", "dp", &frame);
    let slot = (W - LEFT - RIGHT) / groups.len() as f64;
    for (i, (label, rs)) in groups.iter().enumerate() {
        let dps: Vec<f64> = rs.iter().map(|r| r.summary.dp).collect();
        let (lo, q1, q2, q3, hi) = quartiles(&dps);
        let cx = LEFT + slot * (i as f64 + 0.5);
        let half = (slot * 0.3).min(20.0);
        let colour = PALETTE[i % PALETTE.len()];
        let _ = writeln!(s, r#"<line x1="{cx:.1}" y1="{:.1}" x2="{cx:.1}" y2="{:.1}" stroke="black"/>"#, frame.py(lo), frame.py(hi));
        let _ = writeln!(
            s,
            r#"<rect x="{:.1}" y="{:.1}" width="{:.1}" height="{:.1}" fill="{colour}" fill-opacity="0.4" stroke="black"/>"#,
            cx - half,
            frame.py(q3),
            2.0 * half,
            (frame.py(q1) - frame.py(q3)).max(0.5)
        );
        let _ = writeln!(s, r#"<line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="black" stroke-width="2"/>"#, cx - half, frame.py(q2), cx + half, frame.py(q2));
        for d in &dps {
            let _ = writeln!(s, r#"<circle cx="{cx:.1}" cy="{:.1}" r="2" fill="black"/>"#, frame.py(*d));
        }
        let ly = H - BOTTOM + 12.0;
        let _ = writeln!(s, r#"<text x="{cx:.1}" y="{ly}" transform="rotate(40 {cx:.1} {ly})">{}</text>"#, escape(label));
    }
    s.push_str("</svg>\n");
    let svg_path = dir.join("disparity_boxplot.svg");
    std::fs::write(&svg_path, s)?;
    Ok(vec![svg_path, csv_path])
}

/// Indices of points not dominated in (lower disparity, higher reward).
pub fn non_dominated(points: &[(f64, f64)]) -> Vec<bool> {
    points
        .iter()
        .map(|&(d, r)| {
            !points.iter().any(|&(d2, r2)| d2 <= d && r2 >= r && (d2 < d || r2 > r))
        })
        .collect()
}

fn pareto(dir: &Path, records: &[RunRecord]) -> Result<Vec<PathBuf>> {
    let points: Vec<(f64, f64)> = records.iter().map(|r| (r.summary.dp, r.summary.mean_reward)).collect();
    let front = non_dominated(&points);
    let rows: Vec<Vec<String>> = records
        .iter()
        .zip(&front)
        .map(|(r, f)| vec![r.label.clone(), r.seed.to_string(), r.summary.dp.to_string(), r.summary.mean_reward.to_string(), f.to_string()])
        .collect();
    let csv_path = dir.join("pareto.csv");
    write_csv(&csv_path, &["label", "seed", "dp", "mean_reward", "non_dominated"], &rows)?;

    let frame = Frame::new(range(points.iter().map(|p| p.0)), range(points.iter().map(|p| p.1)));
    let mut s = svg_open("Disparity versus reward", "dp", "mean reward", &frame);
    x_ticks(&mut s, &frame);
    let mut frontier: Vec<(f64, f64)> = points.iter().zip(&front).filter(|(_, f)| **f).map(|(p, _)| *p).collect();
    frontier.sort_by(|a, b| a.0.total_cmp(&b.0));
    if frontier.len() > 1 {
        let d: Vec<String> = frontier.iter().map(|(x, y)| format!("{:.1},{:.1}", frame.px(*x), frame.py(*y))).collect();
        let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="grey" stroke-dasharray="4 3"/>"#, d.join(" "));
    }
    for ((x, y), f) in points.iter().zip(&front) {
        let (fill, r) = if *f { ("#d62728", 4.5) } else { ("#1f77b4", 3.0) };
        let _ = writeln!(s, r#"<circle cx="{:.1}" cy="{:.1}" r="{r}" fill="{fill}"/>"#, frame.px(*x), frame.py(*y));
    }
    s.push_str("</svg>\n");
    let svg_path = dir.join("pareto.svg");
    std::fs::write(&svg_path, s)?;
    Ok(vec![svg_path, csv_path])
}

fn convergence(dir: &Path, records: &[RunRecord]) -> Result<Vec<PathBuf>> {
    // label -> episode -> dp values across seeds
    let mut curves: Vec<(String, BTreeMap<usize, Vec<f64>>)> = Vec::new();
    for (label, rs) in by_label(records) {
        let mut by_ep: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        for r in rs {
            for row in r.train_rows() {
                if let Some(rep) = &row.report {
                    by_ep.entry(row.episode).or_default().push(rep.dp);
                }
            }
        }
        curves.push((label, by_ep));
    }
    let mut rows = Vec::new();
    for (label, by_ep) in &curves {
        for (ep, v) in by_ep {
            rows.push(vec![label.clone(), ep.to_string(), median(v).unwrap_or(f64::NAN).to_string(), v.len().to_string()]);
        }
    }
    let csv_path = dir.join("convergence.csv");
    write_csv(&csv_path, &["label", "episode", "median_dp", "seeds"], &rows)?;

    let pts = || curves.iter().flat_map(|(_, m)| m.iter().map(|(e, v)| (*e as f64, median(v).unwrap_or(0.0))));
    let frame = Frame::new(range(pts().map(|p| p.0).chain([0.0])), range(pts().map(|p| p.1).chain([0.0])));
    let mut s = svg_open("Training demographic disparity", "episode", "median dp", &frame);
    x_ticks(&mut s, &frame);
    for (i, (label, by_ep)) in curves.iter().enumerate() {
        let colour = PALETTE[i % PALETTE.len()];
        let d: Vec<String> = by_ep
            .iter()
            .map(|(e, v)| format!("{:.1},{:.1}", frame.px(*e as f64), frame.py(median(v).unwrap_or(0.0))))
            .collect();
        let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{colour}"/>"#, d.join(" "));
        let ly = H - BOTTOM + 36.0 + 12.0 * (i % 5) as f64;
        let lx = LEFT + 130.0 * (i / 5) as f64;
        let _ = writeln!(s, r#"<rect x="{lx}" y="{}" width="10" height="3" fill="{colour}"/><text x="{}" y="{ly}">{}</text>"#, ly - 4.0, lx + 14.0, escape(label));
    }
    s.push_str("</svg>\n");
    let svg_path = dir.join("convergence.svg");
    std::fs::write(&svg_path, s)?;
    Ok(vec![svg_path, csv_path])
}

/// Renders all figures into `dir`; returns the files written.
pub fn export_plots(records: &[RunRecord], dir: &Path) -> Result<Vec<PathBuf>> {
    if records.is_empty() {
        return Err(Error::Validation("nothing to plot: no run records".into()));
    }
    std::fs::create_dir_all(dir)?;
    let mut out = boxplot(dir, records)?;
    out.extend(pareto(dir, records)?);
    out.extend(convergence(dir, records)?);
    Ok(out)
}
