//! Heart-rate evaluation over fixed-length clips, reports and plot data.

pub mod bench;
pub mod plots;

use std::ops::Range;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::augment::{self, VideoClip};
use crate::config::RunConfig;
use crate::data::{eval_windows, DatasetRecord};
use crate::error::{Result, SspdError};
use crate::model::{batch_tensor, count_cost, Network, ParamStore};
use crate::signal::{self, HrMetrics, PeakOptions, RealSignal};

pub use bench::{benchmark_inference, BenchReport};
pub use plots::{bland_altman, emit_plots, BlandAltman};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipRow {
    pub subject_id: String,
    pub clip_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task: Option<String>,
    pub clip_index: usize,
    pub start_s: f64,
    pub hr_pred: Option<f64>,
    pub hr_gt: f64,
    pub abs_err: Option<f64>,
    /// Why no prediction was made, for excluded clips.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub params: usize,
    pub flops: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<ClipRow>,
    /// Over the clips with a prediction; absent when fewer than one succeeded.
    pub metrics: Option<HrMetrics>,
    pub n_clips: usize,
    pub n_failed: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cost: Option<CostReport>,
}

impl EvalReport {
    pub fn from_rows(rows: Vec<ClipRow>, cost: Option<CostReport>) -> Result<Self> {
        let metrics = recompute_metrics(&rows)?;
        let n_failed = rows.iter().filter(|r| r.hr_pred.is_none()).count();
        Ok(Self {
            n_clips: rows.len(),
            n_failed,
            rows,
            metrics,
            cost,
        })
    }

    pub fn succeeded(&self) -> impl Iterator<Item = (&ClipRow, f64)> {
        self.rows.iter().filter_map(|r| r.hr_pred.map(|p| (r, p)))
    }
}

fn recompute_metrics(rows: &[ClipRow]) -> Result<Option<HrMetrics>> {
    let (pred, gt): (Vec<f64>, Vec<f64>) = rows.iter().filter_map(|r| r.hr_pred.map(|p| (p, r.hr_gt))).unzip();
    if pred.is_empty() {
        return Ok(None);
    }
    Ok(Some(signal::hr_metrics(&pred, &gt)?))
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9
}

/// Writes `report.json` after checking that the stored aggregates match the rows.
pub fn save_report(report: &EvalReport, path: &Path) -> Result<()> {
    let again = recompute_metrics(&report.rows)?;
    let consistent = match (&again, &report.metrics) {
        (None, None) => true,
        (Some(a), Some(b)) => {
            close(a.mae, b.mae)
                && close(a.rmse, b.rmse)
                && close(a.sd, b.sd)
                && match (a.r, b.r) {
                    (Some(x), Some(y)) => close(x, y),
                    (None, None) => true,
                    _ => false,
                }
        }
        _ => false,
    };
    if !consistent {
        return Err(SspdError::Shape("report aggregates do not match its rows".into()));
    }
    let text = serde_json::to_string_pretty(report)?;
    std::fs::write(path, text + "\n").map_err(|e| SspdError::io(path, e))
}

pub fn load_report(path: &Path) -> Result<EvalReport> {
    let text = std::fs::read_to_string(path).map_err(|e| SspdError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| SspdError::parse(path, e.to_string()))
}

/// Reference heart rate of frames `window` of a record.
pub fn ground_truth_hr(record: &DatasetRecord, window: &Range<usize>, peaks: PeakOptions) -> Result<f64> {
    let fs = record.fs();
    if let Some(hr) = &record.gt_hr {
        if let Some(v) = hr.mean_in(window.start as f64 / fs, window.end as f64 / fs) {
            return Ok(v);
        }
    }
    match &record.gt_ppg {
        Some(ppg) => {
            let seg = RealSignal::new(ppg.samples()[window.clone()].to_vec(), fs)?;
            signal::estimate_hr_with(&seg, peaks)
        }
        None => Err(SspdError::Usage(format!(
            "record {} has no ground truth; use `infer` for unlabeled data",
            record.clip_id
        ))),
    }
}

/// Runs `predict` on every evaluation clip and scores it against the reference.
pub fn evaluate_with(
    records: &[DatasetRecord],
    clip_s: f64,
    peaks: PeakOptions,
    mut predict: impl FnMut(&DatasetRecord, &Range<usize>, &VideoClip) -> Result<RealSignal>,
) -> Result<Vec<ClipRow>> {
    if let Some(r) = records.iter().find(|r| !r.has_ground_truth()) {
        return Err(SspdError::Usage(format!(
            "record {} has no ground truth; use `infer` for unlabeled data",
            r.clip_id
        )));
    }
    let mut rows = Vec::new();
    for record in records {
        for (k, window) in eval_windows(record, clip_s).into_iter().enumerate() {
            let hr_gt = ground_truth_hr(record, &window, peaks)?;
            let clip = record.source.load(window.start, window.len())?;
            let pred = predict(record, &window, &clip).and_then(|y| signal::estimate_hr_with(&y, peaks));
            let (hr_pred, error) = match pred {
                Ok(v) => (Some(v), None),
                Err(e @ (SspdError::InsufficientPeaks { .. } | SspdError::InvalidSignal(_) | SspdError::ZeroPower)) => {
                    log::warn!("{} clip {k}: {e}", record.clip_id);
                    (None, Some(e.to_string()))
                }
                Err(e) => return Err(e),
            };
            rows.push(ClipRow {
                subject_id: record.subject_id.clone(),
                clip_id: record.clip_id.clone(),
                task: record.task.clone(),
                clip_index: k,
                start_s: window.start as f64 / record.fs(),
                hr_pred,
                hr_gt,
                abs_err: hr_pred.map(|p| (p - hr_gt).abs()),
                error,
            });
        }
    }
    Ok(rows)
}

/// Predicted pulse for one raw clip: crop and resize, plain global view,
/// frame differences, then backbone and predictor.
pub fn predict_clip(net: &Network, params: &ParamStore, cfg: &RunConfig, clip: &VideoClip) -> Result<RealSignal> {
    let pre = augment::preprocess_clip(clip, cfg.augment.preprocess_size)?;
    let view = augment::global_view(&pre, cfg.augment.input_size);
    let diff = augment::frame_difference(&view);
    let t = view.n_frames() - 1;
    let v = batch_tensor(&[&diff], t, 3, cfg.augment.input_size, params.dtype())?;
    let y = net.inference_forward(&params.view(false), &v)?;
    let samples = y.squeeze(0)?.to_dtype(candle_core::DType::F64)?.to_vec1::<f64>()?;
    RealSignal::new(samples, clip.fs())
}

pub fn peak_options(cfg: &RunConfig) -> PeakOptions {
    PeakOptions {
        bandpass: cfg.eval.hr_bandpass,
    }
}

/// Evaluates the target parameters of a trained model on labeled records.
pub fn evaluate(net: &Network, target: &ParamStore, records: &[DatasetRecord], cfg: &RunConfig) -> Result<EvalReport> {
    let rows = evaluate_with(records, cfg.eval.clip_eval_s, peak_options(cfg), |_, _, clip| {
        predict_clip(net, target, cfg, clip)
    })?;
    let t = records
        .first()
        .map(|r| (cfg.eval.clip_eval_s * r.fs()).round() as usize - 1)
        .unwrap_or(0);
    let cost = count_cost(net.config(), target, (t, cfg.augment.input_size, cfg.augment.input_size));
    EvalReport::from_rows(
        rows,
        Some(CostReport {
            params: cost.params,
            flops: cost.flops,
            wall_ms: None,
        }),
    )
}

/// `base/<timestamp>-<config hash>`, created.
pub fn run_dir(base: &Path, cfg: &RunConfig) -> Result<PathBuf> {
    let stamp = chrono::Local::now().format("%Y%m%d-%H%M%S");
    let dir = base.join(format!("{stamp}-{}", cfg.hash()));
    std::fs::create_dir_all(&dir).map_err(|e| SspdError::io(&dir, e))?;
    Ok(dir)
}
