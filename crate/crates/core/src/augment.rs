//! Clip preprocessing and the two-view augmentation used for self-distillation.
//!
//! A clip is cropped once (face box from the first frame, or the largest
//! centered square) and resized to the preprocessing size. Local-global
//! augmentation then derives a randomly cropped, flipped and noised local
//! view plus a plainly resized global view; masked difference modeling turns
//! both into first-order frame differences and Bernoulli-masks the local one.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SspdError};

pub const PREPROCESS_SIZE: usize = 151;
pub const VIEW_SIZE: usize = 128;

/// Face box in pixels: top-left corner plus extent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BBox {
    pub x: i64,
    pub y: i64,
    pub w: i64,
    pub h: i64,
}

impl BBox {
    pub fn new(x: i64, y: i64, w: i64, h: i64) -> Self {
        Self { x, y, w, h }
    }

    fn check(&self, width: usize, height: usize) -> Result<()> {
        let ok = self.x >= 0
            && self.y >= 0
            && self.w > 0
            && self.h > 0
            && self.x + self.w <= width as i64
            && self.y + self.h <= height as i64;
        if ok {
            Ok(())
        } else {
            Err(SspdError::InvalidBbox {
                bbox: (self.x, self.y, self.w, self.h),
                width,
                height,
            })
        }
    }
}

/// Frames stored as `(n_frames, 3, height, width)` in row-major order, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoClip {
    frames: Vec<f32>,
    n_frames: usize,
    height: usize,
    width: usize,
    fs: f64,
    pub bbox: Option<BBox>,
}

impl VideoClip {
    pub fn new(frames: Vec<f32>, n_frames: usize, height: usize, width: usize, fs: f64) -> Result<Self> {
        if n_frames < 2 {
            return Err(SspdError::Shape(format!("clip needs >= 2 frames, got {n_frames}")));
        }
        if height < 8 || width < 8 {
            return Err(SspdError::Shape(format!(
                "frames must be at least 8x8, got {height}x{width}"
            )));
        }
        if frames.len() != n_frames * 3 * height * width {
            return Err(SspdError::Shape(format!(
                "expected {} values for {n_frames}x3x{height}x{width}, got {}",
                n_frames * 3 * height * width,
                frames.len()
            )));
        }
        if !(fs.is_finite() && fs > 0.0) {
            return Err(SspdError::Shape(format!("invalid sampling rate {fs}")));
        }
        if frames.iter().any(|v| !v.is_finite()) {
            return Err(SspdError::Shape("frame values must be finite".into()));
        }
        Ok(Self {
            frames,
            n_frames,
            height,
            width,
            fs,
            bbox: None,
        })
    }

    pub fn with_bbox(mut self, bbox: BBox) -> Self {
        self.bbox = Some(bbox);
        self
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn fs(&self) -> f64 {
        self.fs
    }

    pub fn duration_s(&self) -> f64 {
        self.n_frames as f64 / self.fs
    }

    pub fn frames(&self) -> &[f32] {
        &self.frames
    }

    pub fn frame_len(&self) -> usize {
        3 * self.height * self.width
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        let len = self.frame_len();
        &self.frames[t * len..(t + 1) * len]
    }

    /// Contiguous frames `[start, start + count)`; the box is kept.
    pub fn slice(&self, start: usize, count: usize) -> Result<Self> {
        if start + count > self.n_frames {
            return Err(SspdError::ClipTooShort {
                needed: start + count,
                available: self.n_frames,
            });
        }
        let len = self.frame_len();
        let mut clip = Self::new(
            self.frames[start * len..(start + count) * len].to_vec(),
            count,
            self.height,
            self.width,
            self.fs,
        )?;
        clip.bbox = self.bbox;
        Ok(clip)
    }
}

/// Source rectangle in (possibly fractional) pixel coordinates.
#[derive(Debug, Clone, Copy)]
struct Region {
    x: f64,
    y: f64,
    w: f64,
    h: f64,
}

/// Per-output-coordinate interpolation taps.
fn taps(src_len: usize, offset: f64, extent: f64, out_len: usize, flip: bool) -> Vec<(usize, usize, f32)> {
    (0..out_len)
        .map(|o| {
            let o = if flip { out_len - 1 - o } else { o };
            let s = offset + (o as f64 + 0.5) * extent / out_len as f64 - 0.5;
            let s = s.clamp(0.0, (src_len - 1) as f64);
            let i0 = s.floor() as usize;
            let i1 = (i0 + 1).min(src_len - 1);
            (i0, i1, (s - i0 as f64) as f32)
        })
        .collect()
}

/// Bilinear crop-and-resize of every frame and channel with the same geometry.
fn resample(clip: &VideoClip, region: Region, out: usize, flip: bool) -> VideoClip {
    let xs = taps(clip.width, region.x, region.w, out, flip);
    let ys = taps(clip.height, region.y, region.h, out, false);
    let plane = clip.height * clip.width;
    let mut frames = Vec::with_capacity(clip.n_frames * 3 * out * out);
    for src in clip.frames.chunks_exact(plane) {
        for &(y0, y1, wy) in &ys {
            let r0 = &src[y0 * clip.width..(y0 + 1) * clip.width];
            let r1 = &src[y1 * clip.width..(y1 + 1) * clip.width];
            for &(x0, x1, wx) in &xs {
                let top = r0[x0] + (r0[x1] - r0[x0]) * wx;
                let bottom = r1[x0] + (r1[x1] - r1[x0]) * wx;
                frames.push(top + (bottom - top) * wy);
            }
        }
    }
    VideoClip {
        frames,
        n_frames: clip.n_frames,
        height: out,
        width: out,
        fs: clip.fs,
        bbox: None,
    }
}

/// Crops to the clip's box (or the largest centered square) and resizes to `size`.
pub fn preprocess_clip(raw: &VideoClip, size: usize) -> Result<VideoClip> {
    let region = match raw.bbox {
        Some(b) => {
            b.check(raw.width, raw.height)?;
            Region {
                x: b.x as f64,
                y: b.y as f64,
                w: b.w as f64,
                h: b.h as f64,
            }
        }
        None => {
            let side = raw.width.min(raw.height);
            Region {
                x: ((raw.width - side) / 2) as f64,
                y: ((raw.height - side) / 2) as f64,
                w: side as f64,
                h: side as f64,
            }
        }
    };
    Ok(resample(raw, region, size, false))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    /// Probability that a mask element zeroes its difference value.
    pub p: f64,
    /// Area fraction range for the local view's random crop.
    pub crop_scale: (f64, f64),
    pub flip_prob: f64,
    pub noise_std: f64,
    pub view_size: usize,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            p: 0.3,
            crop_scale: (0.7, 1.0),
            flip_prob: 0.5,
            noise_std: 0.02,
            view_size: VIEW_SIZE,
            seed: 0,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.crop_scale;
        if !(0.0..1.0).contains(&self.p) {
            return Err(SspdError::Config(format!("mask ratio p={} must be in [0, 1)", self.p)));
        }
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return Err(SspdError::Config(format!(
                "crop_scale ({lo}, {hi}) must satisfy 0 < min <= max <= 1"
            )));
        }
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return Err(SspdError::Config(format!("flip_prob {} not in [0, 1]", self.flip_prob)));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(SspdError::Config(format!("noise_std {} must be >= 0", self.noise_std)));
        }
        if self.view_size < 8 {
            return Err(SspdError::Config(format!("view_size {} must be >= 8", self.view_size)));
        }
        Ok(())
    }
}

/// Deterministic random stream for one clip: `(seed, clip index)` fully determines it.
pub fn clip_rng(seed: u64, clip_index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(clip_index);
    rng
}

/// The geometric draws behind a local-global view pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViewParams {
    pub crop_x: f64,
    pub crop_y: f64,
    pub crop_side: f64,
    pub flip_local: bool,
    pub flip_global: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViewPair {
    pub local: VideoClip,
    pub global: VideoClip,
    pub params: ViewParams,
}

pub fn local_global_views<R: Rng + ?Sized>(x: &VideoClip, cfg: &AugmentConfig, rng: &mut R) -> ViewPair {
    let (lo, hi) = cfg.crop_scale;
    let scale = if hi > lo { rng.random_range(lo..=hi) } else { lo };
    let side_full = x.width.min(x.height) as f64;
    let side = side_full * scale.sqrt();
    let crop_x = rng.random::<f64>() * (x.width as f64 - side);
    let crop_y = rng.random::<f64>() * (x.height as f64 - side);
    let flip_local = rng.random::<f64>() < cfg.flip_prob;
    let flip_global = rng.random::<f64>() < cfg.flip_prob;

    let mut local = resample(
        x,
        Region {
            x: crop_x,
            y: crop_y,
            w: side,
            h: side,
        },
        cfg.view_size,
        flip_local,
    );
    if cfg.noise_std > 0.0 {
        let normal = Normal::new(0.0f32, cfg.noise_std as f32).expect("validated std");
        for v in local.frames.iter_mut() {
            *v += normal.sample(rng);
        }
    }
    let global = resample(
        x,
        Region {
            x: 0.0,
            y: 0.0,
            w: x.width as f64,
            h: x.height as f64,
        },
        cfg.view_size,
        flip_global,
    );
    ViewPair {
        local,
        global,
        params: ViewParams {
            crop_x,
            crop_y,
            crop_side: side,
            flip_local,
            flip_global,
        },
    }
}

/// Deterministic evaluation view: plain resize, no flip, no noise.
pub fn global_view(x: &VideoClip, size: usize) -> VideoClip {
    resample(
        x,
        Region {
            x: 0.0,
            y: 0.0,
            w: x.width as f64,
            h: x.height as f64,
        },
        size,
        false,
    )
}

/// First forward difference along time: `(n_frames - 1) x 3 x H x W`.
pub fn frame_difference(clip: &VideoClip) -> Vec<f32> {
    let len = clip.frame_len();
    clip.frames[len..]
        .iter()
        .zip(&clip.frames[..clip.frames.len() - len])
        .map(|(next, prev)| next - prev)
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct DifferencePair {
    /// Masked local-view differences, `T x 3 x S x S`.
    pub masked: Vec<f32>,
    /// Unmasked global-view differences, `T x 3 x S x S`.
    pub original: Vec<f32>,
    /// `true` where the local difference is kept.
    pub mask: Vec<bool>,
    pub n_steps: usize,
    pub size: usize,
    pub p: f64,
}

impl DifferencePair {
    pub fn zeroed_fraction(&self) -> f64 {
        self.mask.iter().filter(|&&keep| !keep).count() as f64 / self.mask.len() as f64
    }

    pub fn apply_mask(&self, values: &[f32]) -> Vec<f32> {
        values
            .iter()
            .zip(&self.mask)
            .map(|(&v, &keep)| if keep { v } else { 0.0 })
            .collect()
    }
}

pub fn masked_difference<R: Rng + ?Sized>(views: &ViewPair, cfg: &AugmentConfig, rng: &mut R) -> DifferencePair {
    let local = frame_difference(&views.local);
    let original = frame_difference(&views.global);
    let mask: Vec<bool> = (0..local.len()).map(|_| rng.random::<f64>() >= cfg.p).collect();
    let masked = local
        .iter()
        .zip(&mask)
        .map(|(&v, &keep)| if keep { v } else { 0.0 })
        .collect();
    DifferencePair {
        masked,
        original,
        mask,
        n_steps: views.local.n_frames - 1,
        size: views.local.height,
        p: cfg.p,
    }
}
