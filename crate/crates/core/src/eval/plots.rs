//! Plot data (CSV) and simple SVG renders of an evaluation report.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::EvalReport;
use crate::error::{Result, SspdError};

const LIMIT_Z: f64 = 1.96;
const W: f64 = 480.0;
const H: f64 = 360.0;
const MARGIN: f64 = 48.0;

/// Bias and limits of agreement of `pred - gt`, population SD.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlandAltman {
    pub bias: f64,
    pub lower: f64,
    pub upper: f64,
}

pub fn bland_altman(pairs: &[(f64, f64)]) -> Result<BlandAltman> {
    if pairs.is_empty() {
        return Err(SspdError::Usage("no predictions to plot".into()));
    }
    let n = pairs.len() as f64;
    let diffs: Vec<f64> = pairs.iter().map(|(p, g)| p - g).collect();
    let bias = diffs.iter().sum::<f64>() / n;
    let sd = (diffs.iter().map(|d| (d - bias).powi(2)).sum::<f64>() / n).sqrt();
    Ok(BlandAltman {
        bias,
        lower: bias - LIMIT_Z * sd,
        upper: bias + LIMIT_Z * sd,
    })
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| SspdError::io(path, e))
}

struct Axes {
    x: (f64, f64),
    y: (f64, f64),
}

impl Axes {
    fn fit(xs: impl Iterator<Item = f64> + Clone, ys: impl Iterator<Item = f64> + Clone) -> Self {
        let range = |it: &mut dyn Iterator<Item = f64>| {
            let (lo, hi) = it.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
            let pad = ((hi - lo) * 0.08).max(1.0);
            (lo - pad, hi + pad)
        };
        Self {
            x: range(&mut xs.clone()),
            y: range(&mut ys.clone()),
        }
    }

    fn px(&self, x: f64) -> f64 {
        MARGIN + (x - self.x.0) / (self.x.1 - self.x.0) * (W - 2.0 * MARGIN)
    }

    fn py(&self, y: f64) -> f64 {
        H - MARGIN - (y - self.y.0) / (self.y.1 - self.y.0) * (H - 2.0 * MARGIN)
    }

    fn frame(&self, svg: &mut String, title: &str, xlabel: &str, ylabel: &str) {
        let _ = write!(
            svg,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="12">
<rect width="100%" height="100%" fill="white"/>
<rect x="{MARGIN}" y="{MARGIN}" width="{}" height="{}" fill="none" stroke="black"/>
<text x="{}" y="24" text-anchor="middle" font-size="14">{title}</text>
<text x="{}" y="{}" text-anchor="middle">{xlabel}</text>
<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{ylabel}</text>
"#,
            W - 2.0 * MARGIN,
            H - 2.0 * MARGIN,
            W / 2.0,
            W / 2.0,
            H - 10.0,
            H / 2.0,
            H / 2.0,
        );
        for (v, is_x) in [(self.x.0, true), (self.x.1, true), (self.y.0, false), (self.y.1, false)] {
            if is_x {
                let _ = writeln!(svg, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{v:.0}</text>"#, self.px(v), H - MARGIN + 16.0);
            } else {
                let _ = writeln!(svg, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{v:.0}</text>"#, MARGIN - 4.0, self.py(v) + 4.0);
            }
        }
    }

    fn hline(&self, svg: &mut String, y: f64, dash: bool) {
        let _ = writeln!(
            svg,
            r#"<line x1="{MARGIN}" y1="{:.1}" x2="{}" y2="{:.1}" stroke="gray"{}/>"#,
            self.py(y),
            W - MARGIN,
            self.py(y),
            if dash { r#" stroke-dasharray="4 3""# } else { "" }
        );
    }
}

fn dot(svg: &mut String, x: f64, y: f64) {
    let _ = writeln!(svg, r#"<circle cx="{x:.1}" cy="{y:.1}" r="3" fill="steelblue"/>"#);
}

/// Writes scatter, Bland-Altman and (when tasks are known) per-task error
/// files under `out_dir`; returns the written paths.
pub fn emit_plots(report: &EvalReport, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let pairs: Vec<(f64, f64)> = report.succeeded().map(|(r, p)| (p, r.hr_gt)).collect();
    let ba = bland_altman(&pairs)?;
    std::fs::create_dir_all(out_dir).map_err(|e| SspdError::io(out_dir, e))?;
    let mut written = Vec::new();

    let mut csv = String::from("subject_id,clip_id,hr_gt,hr_pred\n");
    for (r, p) in report.succeeded() {
        let _ = writeln!(csv, "{},{},{},{}", r.subject_id, r.clip_id, r.hr_gt, p);
    }
    let path = out_dir.join("scatter.csv");
    write(&path, &csv)?;
    written.push(path);

    let mut csv = String::from("mean,diff,bias,lower,upper\n");
    for (p, g) in &pairs {
        let _ = writeln!(csv, "{},{},{},{},{}", (p + g) / 2.0, p - g, ba.bias, ba.lower, ba.upper);
    }
    let path = out_dir.join("bland_altman.csv");
    write(&path, &csv)?;
    written.push(path);

    let all_hr = pairs.iter().flat_map(|(p, g)| [*p, *g]);
    let axes = Axes::fit(all_hr.clone(), all_hr);
    let mut svg = String::new();
    axes.frame(&mut svg, "Predicted vs reference HR", "reference HR (bpm)", "predicted HR (bpm)");
    let lo = axes.x.0.max(axes.y.0);
    let hi = axes.x.1.min(axes.y.1);
    let _ = writeln!(
        svg,
        r#"<line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="gray" stroke-dasharray="4 3"/>"#,
        axes.px(lo),
        axes.py(lo),
        axes.px(hi),
        axes.py(hi)
    );
    for (p, g) in &pairs {
        dot(&mut svg, axes.px(*g), axes.py(*p));
    }
    svg.push_str("</svg>\n");
    let path = out_dir.join("scatter.svg");
    write(&path, &svg)?;
    written.push(path);

    let means = pairs.iter().map(|(p, g)| (p + g) / 2.0);
    let diffs = pairs.iter().map(|(p, g)| p - g).chain([ba.lower, ba.upper]);
    let axes = Axes::fit(means, diffs);
    let mut svg = String::new();
    axes.frame(&mut svg, "Bland-Altman", "mean HR (bpm)", "difference (bpm)");
    axes.hline(&mut svg, ba.bias, false);
    axes.hline(&mut svg, ba.lower, true);
    axes.hline(&mut svg, ba.upper, true);
    for (p, g) in &pairs {
        dot(&mut svg, axes.px((p + g) / 2.0), axes.py(p - g));
    }
    svg.push_str("</svg>\n");
    let path = out_dir.join("bland_altman.svg");
    write(&path, &svg)?;
    written.push(path);

    let mut by_task: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for (r, p) in report.succeeded() {
        if let Some(t) = &r.task {
            by_task.entry(t.as_str()).or_default().push((p - r.hr_gt).abs());
        }
    }
    if !by_task.is_empty() {
        let mut csv = String::from("task,subject_id,clip_id,abs_err\n");
        for (r, p) in report.succeeded() {
            if let Some(t) = &r.task {
                let _ = writeln!(csv, "{t},{},{},{}", r.subject_id, r.clip_id, (p - r.hr_gt).abs());
            }
        }
        let path = out_dir.join("errors_by_task.csv");
        write(&path, &csv)?;
        written.push(path);
        let path = out_dir.join("errors_by_task.svg");
        write(&path, &boxplot_svg(&by_task))?;
        written.push(path);
    }
    Ok(written)
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (i, frac) = (pos.floor() as usize, pos.fract());
    if i + 1 < sorted.len() {
        sorted[i] + frac * (sorted[i + 1] - sorted[i])
    } else {
        sorted[i]
    }
}

fn boxplot_svg(groups: &BTreeMap<&str, Vec<f64>>) -> String {
    let max = groups.values().flatten().fold(1.0f64, |a, &b| a.max(b));
    let n = groups.len() as f64;
    let axes = Axes { x: (0.0, n), y: (0.0, max * 1.1) };
    let mut svg = String::new();
    axes.frame(&mut svg, "Absolute error by task", "task", "absolute error (bpm)");
    for (k, (task, vals)) in groups.iter().enumerate() {
        let mut v = vals.clone();
        v.sort_by(f64::total_cmp);
        let (q1, med, q3) = (quantile(&v, 0.25), quantile(&v, 0.5), quantile(&v, 0.75));
        let (lo, hi) = (v[0], v[v.len() - 1]);
        let cx = axes.px(k as f64 + 0.5);
        let half = 0.3 * (W - 2.0 * MARGIN) / n;
        let _ = writeln!(
            svg,
            r#"<line x1="{cx:.1}" y1="{:.1}" x2="{cx:.1}" y2="{:.1}" stroke="black"/>
<rect x="{:.1}" y="{:.1}" width="{:.1}" height="{:.1}" fill="lightsteelblue" stroke="black"/>
<line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="black" stroke-width="2"/>
<text x="{cx:.1}" y="{:.1}" text-anchor="middle">{task}</text>"#,
            axes.py(lo),
            axes.py(hi),
            cx - half,
            axes.py(q3),
            2.0 * half,
            (axes.py(q1) - axes.py(q3)).max(1.0),
            cx - half,
            axes.py(med),
            cx + half,
            axes.py(med),
            H - MARGIN + 30.0,
        );
    }
    svg.push_str("</svg>\n");
    svg
}
