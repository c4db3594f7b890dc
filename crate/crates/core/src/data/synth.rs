//! Synthetic pulsatile video: a smooth skin region whose color follows a
//! periodic pulse train, over a static textured background.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{ClipSource, DatasetRecord};
use crate::augment::{clip_rng, VideoClip};
use crate::error::{Result, SspdError};
use crate::signal::{RealSignal, HR_MAX_BPM, HR_MIN_BPM};

const SKIN_RGB: [f32; 3] = [0.62, 0.46, 0.36];
const BACKGROUND_RGB: [f32; 3] = [0.22, 0.26, 0.30];
/// Relative pulse strength per channel; green carries the most.
const PULSE_WEIGHTS: [f32; 3] = [0.35, 1.0, 0.55];
const TEXTURE_STD: f32 = 0.03;
const EDGE_SOFTNESS: f64 = 0.15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub hr_bpm: f64,
    pub fs: f64,
    pub duration_s: f64,
    pub height: usize,
    pub width: usize,
    pub skin_fraction: f64,
    pub pulse_amplitude: f64,
    pub noise_std: f64,
    pub drift_bpm_per_min: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            hr_bpm: 72.0,
            fs: 30.0,
            duration_s: 10.0,
            height: 64,
            width: 64,
            skin_fraction: 0.5,
            pulse_amplitude: 0.02,
            noise_std: 0.005,
            drift_bpm_per_min: 0.0,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn n_frames(&self) -> usize {
        (self.duration_s * self.fs).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(SspdError::Config(m));
        if !(HR_MIN_BPM..=HR_MAX_BPM).contains(&self.hr_bpm) {
            return bad(format!("hr {} bpm outside [{HR_MIN_BPM}, {HR_MAX_BPM}]", self.hr_bpm));
        }
        let end_hr = self.hr_bpm + self.drift_bpm_per_min * self.duration_s / 60.0;
        if !(HR_MIN_BPM..=HR_MAX_BPM).contains(&end_hr) {
            return bad(format!("drift takes hr to {end_hr} bpm, outside the prior band"));
        }
        if !(self.fs > 0.0 && self.fs.is_finite()) {
            return bad(format!("fs {} must be positive", self.fs));
        }
        if self.n_frames() < 2 {
            return bad(format!("duration {} s gives fewer than 2 frames", self.duration_s));
        }
        if self.height < 8 || self.width < 8 {
            return bad(format!("frames must be at least 8x8, got {}x{}", self.height, self.width));
        }
        if !(self.skin_fraction > 0.0 && self.skin_fraction <= 1.0) {
            return bad(format!("skin fraction {} not in (0, 1]", self.skin_fraction));
        }
        if !(self.pulse_amplitude > 0.0) {
            return bad("pulse amplitude must be positive".into());
        }
        if !(self.noise_std >= 0.0) {
            return bad("noise std must be >= 0".into());
        }
        Ok(())
    }
}

/// One cycle of the pulse, `u` in `[0, 1)`: a raised-cosine systolic upstroke
/// (15% of the cycle), a slower decay, and a diastolic shoulder on the decay.
pub fn pulse_shape(u: f64) -> f64 {
    use std::f64::consts::PI;
    let u = u.rem_euclid(1.0);
    let mut v = if u < 0.15 {
        0.5 * (1.0 - (PI * u / 0.15).cos())
    } else if u < 0.5 {
        0.5 * (1.0 + (PI * (u - 0.15) / 0.35).cos())
    } else {
        0.0
    };
    if (0.3..0.6).contains(&u) {
        v += 0.125 * (1.0 - (2.0 * PI * (u - 0.3) / 0.3).cos());
    }
    v
}

/// Pulse samples at `t = i / fs`, with heart rate `hr + drift * t / 60`.
pub fn pulse_wave(hr_bpm: f64, drift_bpm_per_min: f64, fs: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| {
            let t = i as f64 / fs;
            // Integral of the instantaneous frequency in cycles.
            let cycles = (hr_bpm * t + drift_bpm_per_min * t * t / 120.0) / 60.0;
            pulse_shape(cycles)
        })
        .collect()
}

/// Soft elliptical skin mask covering about `fraction` of the frame.
pub fn skin_mask(height: usize, width: usize, fraction: f64) -> Vec<f32> {
    let s = (4.0 * fraction / std::f64::consts::PI).sqrt();
    let (cy, cx) = ((height as f64 - 1.0) / 2.0, (width as f64 - 1.0) / 2.0);
    let (ry, rx) = (s * height as f64 / 2.0, s * width as f64 / 2.0);
    let mut out = Vec::with_capacity(height * width);
    for y in 0..height {
        for x in 0..width {
            let r = (((y as f64 - cy) / ry).powi(2) + ((x as f64 - cx) / rx).powi(2)).sqrt();
            let m = ((1.0 + EDGE_SOFTNESS - r) / (2.0 * EDGE_SOFTNESS)).clamp(0.0, 1.0);
            out.push((m * m * (3.0 - 2.0 * m)) as f32);
        }
    }
    out
}

fn quantize(v: f32) -> f32 {
    (v.clamp(0.0, 1.0) * 255.0).round() / 255.0
}

/// Frames and ground-truth pulse for one spec. Pixel values are multiples of
/// 1/255 so that 8-bit storage is lossless.
pub fn synth_clip(spec: &SynthSpec, subject_id: &str, clip_id: &str) -> Result<DatasetRecord> {
    spec.validate()?;
    let n = spec.n_frames();
    let (h, w) = (spec.height, spec.width);
    let hw = h * w;
    let mut rng = clip_rng(spec.seed, 0);
    let texture_dist = Normal::new(0.0f32, TEXTURE_STD).expect("positive std");
    let texture: Vec<f32> = (0..3 * hw).map(|_| texture_dist.sample(&mut rng)).collect();
    let mask = skin_mask(h, w, spec.skin_fraction);
    let ppg = pulse_wave(spec.hr_bpm, spec.drift_bpm_per_min, spec.fs, n);
    let mean_ppg = ppg.iter().sum::<f64>() / n as f64;
    let noise = (spec.noise_std > 0.0).then(|| Normal::new(0.0f32, spec.noise_std as f32).expect("validated std"));

    let mut frames = Vec::with_capacity(n * 3 * hw);
    for &p in &ppg {
        let pulse = (spec.pulse_amplitude * (p - mean_ppg)) as f32;
        for c in 0..3 {
            for i in 0..hw {
                let m = mask[i];
                let base = m * SKIN_RGB[c] + (1.0 - m) * BACKGROUND_RGB[c] + texture[c * hw + i];
                let mut v = base + m * PULSE_WEIGHTS[c] * pulse;
                if let Some(d) = &noise {
                    v += d.sample(&mut rng);
                }
                frames.push(quantize(v));
            }
        }
    }
    let clip = VideoClip::new(frames, n, h, w, spec.fs)?;
    Ok(DatasetRecord {
        subject_id: subject_id.to_string(),
        clip_id: clip_id.to_string(),
        task: None,
        source: ClipSource::Memory(clip),
        gt_ppg: Some(RealSignal::new(ppg, spec.fs)?),
        gt_hr: None,
    })
}

/// Specs for a dataset of `n` records with heart rates uniform in `hr_range`.
pub fn synth_specs(n: usize, hr_range: (f64, f64), base: &SynthSpec, seed: u64) -> Vec<SynthSpec> {
    let mut rng = clip_rng(seed, u64::MAX);
    (0..n)
        .map(|i| SynthSpec {
            hr_bpm: if hr_range.1 > hr_range.0 {
                rng.random_range(hr_range.0..=hr_range.1)
            } else {
                hr_range.0
            },
            seed: seed.wrapping_mul(1_000_003).wrapping_add(i as u64),
            ..base.clone()
        })
        .collect()
}
