use serde::{Deserialize, Serialize};

use super::{inference_param_count, ModelConfig, ParamStore, SPATIAL_K, TEMPORAL_K};

/// Inference-path cost: exact parameter count and FLOPs as 2 x multiply-accumulates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cost {
    pub params: usize,
    pub flops: u64,
}

/// Counts the backbone and predictor only; the similarity blocks never run at inference.
///
/// `input_shape` is `(T, H, W)` of the difference frames.
pub fn count_cost(cfg: &ModelConfig, params: &ParamStore, input_shape: (usize, usize, usize)) -> Cost {
    let (t, mut h, mut w) = input_shape;
    let t = t as u64;
    let mut macs: u64 = 0;
    let mut cin = cfg.in_channels as u64;
    for &co in &cfg.block_channels {
        h /= 2;
        w /= 2;
        let co = co as u64;
        let pixels = t * (h * w) as u64;
        macs += pixels * co * cin * (SPATIAL_K * SPATIAL_K) as u64;
        macs += pixels * co * co * TEMPORAL_K as u64;
        cin = co;
    }
    let c = cfg.feature_dim() as u64;
    let k = cfg.predictor_kernel as u64;
    macs += t * (k * c * (c / 4) + k * (c / 4));
    Cost {
        params: inference_param_count(params),
        flops: 2 * macs,
    }
}
