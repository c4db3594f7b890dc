use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::augment::{clip_rng, frame_difference, VideoClip};
use crate::error::{Result, SspdError};
use crate::model::{batch_tensor, count_cost, Network, ParamStore};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub params: usize,
    pub flops: u64,
    /// Mean over the trials.
    pub wall_ms: f64,
    pub trials_ms: Vec<f64>,
    /// `(T, H, W)` of the difference input.
    pub shape: (usize, usize, usize),
}

/// Times frame differencing plus the inference path on a random clip of
/// `t + 1` frames, averaged over `repeats` trials.
pub fn benchmark_inference(net: &Network, params: &ParamStore, shape: (usize, usize, usize), repeats: usize, seed: u64) -> Result<BenchReport> {
    if repeats == 0 {
        return Err(SspdError::Usage("repeats must be positive".into()));
    }
    let (t, h, w) = shape;
    let mut rng = clip_rng(seed, 0);
    let frames: Vec<f32> = (0..(t + 1) * 3 * h * w).map(|_| rng.random::<f32>()).collect();
    let clip = VideoClip::new(frames, t + 1, h, w, 30.0)?;
    let view = params.view(false);
    let mut trials_ms = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let start = Instant::now();
        let diff = frame_difference(&clip);
        let v = batch_tensor(&[&diff], t, 3, h, params.dtype())?;
        let y = net.inference_forward(&view, &v)?;
        y.to_dtype(candle_core::DType::F32)?.to_vec2::<f32>()?;
        trials_ms.push(start.elapsed().as_secs_f64() * 1e3);
    }
    let cost = count_cost(net.config(), params, shape);
    Ok(BenchReport {
        params: cost.params,
        flops: cost.flops,
        wall_ms: trials_ms.iter().sum::<f64>() / repeats as f64,
        trials_ms,
        shape,
    })
}
