//! Distillation losses and periodicity regularizers over batched tensors.
//!
//! Every function reduces over the batch by the mean. Targets are detached
//! inside the loss so callers cannot leak gradient into the teacher.

use candle_core::{Device, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SspdError};
use crate::model::{ops, Pyramid};
use crate::signal::SNR_GUARD;

/// What the pyramid loss compares between the two networks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum DistillTarget {
    /// Maps and waves of every layer.
    #[default]
    Pyramid,
    /// Mean squared error between backbone token sequences.
    Tokens,
}

/// Scalar values of one objective evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub tspd: f64,
    pub rpd: f64,
    pub sd: f64,
    pub snr: f64,
    pub total: f64,
}

/// Weighted sum of the four parts; any non-finite part is a divergence.
pub fn total_loss(tspd: f64, rpd: f64, sd: f64, snr: f64, alpha: f64, beta: f64) -> Result<LossBreakdown> {
    let total = tspd + rpd + alpha * sd + beta * snr;
    let parts = LossBreakdown { tspd, rpd, sd, snr, total };
    if [tspd, rpd, sd, snr, total].iter().any(|v| !v.is_finite()) {
        return Err(SspdError::Divergence(format!(
            "non-finite loss: tspd={tspd} rpd={rpd} sd={sd} snr={snr} (alpha={alpha}, beta={beta})"
        )));
    }
    Ok(parts)
}

fn check_depth(a: &Pyramid, b: &Pyramid) -> Result<()> {
    if a.depth() != b.depth() {
        return Err(SspdError::LengthMismatch { left: a.depth(), right: b.depth() });
    }
    for (x, y) in a.maps.iter().zip(&b.maps) {
        if x.dims() != y.dims() {
            return Err(SspdError::Shape(format!("pyramid layers differ: {:?} vs {:?}", x.dims(), y.dims())));
        }
    }
    Ok(())
}

/// Batch mean of the per-sample sum over layers of squared map and wave residuals.
pub fn tspd_loss(online: &Pyramid, target: &Pyramid) -> Result<Tensor> {
    check_depth(online, target)?;
    let mut per_sample: Option<Tensor> = None;
    for l in 0..online.depth() {
        let dm = (&online.maps[l] - target.maps[l].detach())?.sqr()?.sum((1, 2))?;
        let dw = (&online.waves[l] - target.waves[l].detach())?.sqr()?.sum(1)?;
        let layer = (dm + dw)?;
        per_sample = Some(match per_sample {
            Some(acc) => (acc + layer)?,
            None => layer,
        });
    }
    let per_sample = per_sample.ok_or_else(|| SspdError::Shape("empty pyramid".into()))?;
    Ok(per_sample.mean(0)?)
}

/// Token-sequence alternative to the pyramid loss: mean squared error of `(N, T, C)` features.
pub fn token_mse_loss(online: &Tensor, target: &Tensor) -> Result<Tensor> {
    if online.dims() != target.dims() {
        return Err(SspdError::Shape(format!("features differ: {:?} vs {:?}", online.dims(), target.dims())));
    }
    Ok((online - target.detach())?.sqr()?.mean_all()?)
}

/// Negative Pearson plus squared spectral distance, both batch means, on `(N, T)` signals.
pub fn rpd_loss(y_online: &Tensor, y_target: &Tensor) -> Result<Tensor> {
    if y_online.dims() != y_target.dims() {
        return Err(SspdError::Shape(format!(
            "rppg shapes differ: {:?} vs {:?}",
            y_online.dims(),
            y_target.dims()
        )));
    }
    let y_t = y_target.detach();
    let neg_pearson = ops::pearson_rows(y_online, &y_t)?.affine(-1.0, 1.0)?.mean(0)?;
    let spectral = (ops::psd(y_online)? - ops::psd(&y_t)?)?.sqr()?.sum(1)?.mean(0)?;
    Ok((neg_pearson + spectral)?)
}

/// Weighted per-diagonal standard deviation, averaged over diagonals, layers and samples.
///
/// The diagonal at lag `d` of a `T`-token map is scaled by `epsilon * (T - d)`.
pub fn sd_regularization(pyramid: &Pyramid, epsilon: f64) -> Result<Tensor> {
    let mut acc: Option<Tensor> = None;
    for m in &pyramid.maps {
        let t = m.dim(1)?;
        let weights: Vec<f64> = (0..t).map(|d| epsilon * (t - d) as f64).collect();
        let weights = Tensor::from_vec(weights, (1, t), &Device::Cpu)?.to_dtype(m.dtype())?;
        let layer = ops::diagonal_sd(m)?.broadcast_mul(&weights)?.mean(1)?;
        acc = Some(match acc {
            Some(a) => (a + layer)?,
            None => layer,
        });
    }
    let acc = acc.ok_or_else(|| SspdError::Shape("empty pyramid".into()))?;
    Ok((acc / pyramid.depth() as f64)?.mean(0)?)
}

/// `1 / SNR` of each row of `(N, T)`: out-of-band over in-band spectral mass, guarded.
pub fn inverse_snr(x: &Tensor, fs: f64, band: (f64, f64)) -> Result<Tensor> {
    let t = x.dim(1)?;
    let mask = ops::band_mask(t, fs, band.0, band.1, x.dtype())?;
    if ops::scalar(&mask.sum_all()?)? == 0.0 {
        return Err(SspdError::EmptyBand { lo: band.0, hi: band.1 });
    }
    let p = ops::psd(x)?;
    let inside = p.broadcast_mul(&mask)?.sum(1)?;
    let total = p.sum(1)?;
    Ok((((total - &inside)? + SNR_GUARD)? / inside)?)
}

/// Inverse band SNR of every wave plus that of the online signal, over the depth, batch mean.
pub fn snr_regularization(pyramid: &Pyramid, y_online: &Tensor, fs: f64, band: (f64, f64)) -> Result<Tensor> {
    let mut acc = inverse_snr(y_online, fs, band)?;
    for w in &pyramid.waves {
        acc = (acc + inverse_snr(w, fs, band)?)?;
    }
    Ok((acc / pyramid.depth() as f64)?.mean(0)?)
}
