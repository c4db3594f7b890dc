//! Records, synthetic generation, on-disk layouts and clip sampling.

pub mod dataset;
pub mod sampling;
pub mod synth;

use std::path::PathBuf;

use crate::augment::{BBox, VideoClip};
use crate::error::{Result, SspdError};
use crate::signal::RealSignal;

pub use dataset::{load_dataset, read_manifest, write_generic, write_manifest, Layout, LoadOptions, Manifest, ManifestRecord};
pub use sampling::{eval_clips, eval_windows, sample_training_clip};
pub use synth::{synth_clip, synth_specs, SynthSpec};

/// Where a record's frames come from: memory, or image files read on demand.
#[derive(Debug, Clone)]
pub enum ClipSource {
    Memory(VideoClip),
    Frames {
        paths: Vec<PathBuf>,
        fs: f64,
        bbox: Option<BBox>,
    },
}

impl ClipSource {
    pub fn n_frames(&self) -> usize {
        match self {
            Self::Memory(c) => c.n_frames(),
            Self::Frames { paths, .. } => paths.len(),
        }
    }

    pub fn fs(&self) -> f64 {
        match self {
            Self::Memory(c) => c.fs(),
            Self::Frames { fs, .. } => *fs,
        }
    }

    pub fn duration_s(&self) -> f64 {
        self.n_frames() as f64 / self.fs()
    }

    /// Frames `start..start + count` as a clip.
    pub fn load(&self, start: usize, count: usize) -> Result<VideoClip> {
        if start + count > self.n_frames() {
            return Err(SspdError::ClipTooShort {
                needed: start + count,
                available: self.n_frames(),
            });
        }
        match self {
            Self::Memory(c) => c.slice(start, count),
            Self::Frames { paths, fs, bbox } => {
                let mut frames = Vec::new();
                let mut dims = None;
                for p in &paths[start..start + count] {
                    let (h, w, data) = dataset::read_frame(p)?;
                    if *dims.get_or_insert((h, w)) != (h, w) {
                        return Err(SspdError::parse(p, format!("frame is {h}x{w}, earlier frames differ")));
                    }
                    frames.extend(data);
                }
                let (h, w) = dims.unwrap_or((0, 0));
                let clip = VideoClip::new(frames, count, h, w, *fs)?;
                Ok(match bbox {
                    Some(b) => clip.with_bbox(*b),
                    None => clip,
                })
            }
        }
    }
}

/// Reference heart rate samples `(time_s, bpm)`.
#[derive(Debug, Clone, PartialEq)]
pub struct HrTrace {
    pub times: Vec<f64>,
    pub bpm: Vec<f64>,
}

impl HrTrace {
    /// Mean of the samples falling in `[t0, t1)`.
    pub fn mean_in(&self, t0: f64, t1: f64) -> Option<f64> {
        let vals: Vec<f64> = self
            .times
            .iter()
            .zip(&self.bpm)
            .filter(|(t, _)| **t >= t0 && **t < t1)
            .map(|(_, v)| *v)
            .collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }
}

#[derive(Debug, Clone)]
pub struct DatasetRecord {
    pub subject_id: String,
    pub clip_id: String,
    pub task: Option<String>,
    pub source: ClipSource,
    /// Reference pulse sampled at the frame times.
    pub gt_ppg: Option<RealSignal>,
    pub gt_hr: Option<HrTrace>,
}

impl DatasetRecord {
    pub fn fs(&self) -> f64 {
        self.source.fs()
    }

    pub fn n_frames(&self) -> usize {
        self.source.n_frames()
    }

    pub fn duration_s(&self) -> f64 {
        self.source.duration_s()
    }

    pub fn has_ground_truth(&self) -> bool {
        self.gt_ppg.is_some() || self.gt_hr.is_some()
    }
}
