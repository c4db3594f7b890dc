//! Differentiable building blocks shared by the network and the losses.

use candle_core::{DType, Device, Tensor};

use super::conv::{conv2d, safe_sqrt};
use crate::error::Result;

const BN_EPS: f64 = 1e-5;
const NORM_EPS: f64 = 1e-12;

/// 2x2 spatial average pooling of `(N, T, C, H, W)`.
pub fn avg_pool2(x: &Tensor) -> Result<Tensor> {
    let (n, t, c, h, w) = x.dims5()?;
    Ok(x.reshape((n * t * c * h / 2, 2, w / 2, 2))?
        .mean(3)?
        .mean(1)?
        .reshape((n, t, c, h / 2, w / 2))?)
}

/// Per-channel normalization with statistics over `(N, T, H, W)`, then affine.
pub fn batch_norm(x: &Tensor, gamma: &Tensor, beta: &Tensor) -> Result<Tensor> {
    let c = x.dim(2)?;
    let mean = x.mean_keepdim((0, 1, 3, 4))?;
    let centered = x.broadcast_sub(&mean)?;
    let var = centered.sqr()?.mean_keepdim((0, 1, 3, 4))?;
    let normed = centered.broadcast_div(&(var + BN_EPS)?.sqrt()?)?;
    let shape = (1, 1, c, 1, 1);
    Ok(normed
        .broadcast_mul(&gamma.reshape(shape)?)?
        .broadcast_add(&beta.reshape(shape)?)?)
}

/// 3x3 same-padded convolution applied to every frame of `(N, T, C, H, W)`.
pub fn spatial_conv(x: &Tensor, weight: &Tensor) -> Result<Tensor> {
    let (n, t, c, h, w) = x.dims5()?;
    let co = weight.dim(0)?;
    let pad = weight.dim(2)? / 2;
    let y = conv2d(&x.reshape((n * t, c, h, w))?, weight, pad)?;
    Ok(y.reshape((n, t, co, h, w))?)
}

/// Same-padded temporal convolution of `(N, T, C, H, W)` with kernel `(C_out, C, k, 1)`.
pub fn temporal_conv(x: &Tensor, weight: &Tensor) -> Result<Tensor> {
    let (n, t, c, h, w) = x.dims5()?;
    let (co, _, k, _) = weight.dims4()?;
    let xs = x
        .permute((0, 2, 1, 3, 4))?
        .reshape((n, c, t, h * w))?
        .pad_with_zeros(2, k / 2, (k - 1) / 2)?;
    let y = conv2d(&xs, weight, 0)?;
    Ok(y.reshape((n, co, t, h, w))?.permute((0, 2, 1, 3, 4))?.contiguous()?)
}

/// Temporal convolution over a token sequence `(N, T, C_in)` written as unfold + matmul.
///
/// `weight` is `(k * C_in, C_out)` with row `j * C_in + c` holding tap `j` of
/// input channel `c`. Output length is `T + pad_left + pad_right - k + 1`.
pub fn seq_conv(x: &Tensor, weight: &Tensor, bias: Option<&Tensor>, pad_left: usize, pad_right: usize) -> Result<Tensor> {
    let (n, t, c) = x.dims3()?;
    let (rows, co) = weight.dims2()?;
    let k = rows / c;
    let xp = if pad_left + pad_right > 0 {
        x.pad_with_zeros(1, pad_left, pad_right)?
    } else {
        x.clone()
    };
    let t_out = t + pad_left + pad_right + 1 - k;
    let taps = (0..k)
        .map(|j| xp.narrow(1, j, t_out))
        .collect::<candle_core::Result<Vec<_>>>()?;
    let cols = Tensor::cat(&taps, 2)?.reshape((n * t_out, k * c))?;
    let mut y = cols.matmul(weight)?.reshape((n, t_out, co))?;
    if let Some(b) = bias {
        y = y.broadcast_add(b)?;
    }
    Ok(y)
}

/// `(N, T, C_in) x (C_in, C_out) + b`.
pub fn linear(x: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (n, t, c) = x.dims3()?;
    let co = weight.dim(1)?;
    Ok(x.reshape((n * t, c))?
        .matmul(weight)?
        .reshape((n, t, co))?
        .broadcast_add(bias)?)
}

/// Averaging matrix `(t_out, t_in)` with the usual adaptive-pool bin edges.
pub fn adaptive_pool_matrix(t_in: usize, t_out: usize, dtype: DType) -> Result<Tensor> {
    let mut m = vec![0.0f64; t_out * t_in];
    for i in 0..t_out {
        let start = (i * t_in) / t_out;
        let end = ((i + 1) * t_in).div_ceil(t_out);
        let w = 1.0 / (end - start) as f64;
        for j in start..end {
            m[i * t_in + j] = w;
        }
    }
    Ok(Tensor::from_vec(m, (t_out, t_in), &Device::Cpu)?.to_dtype(dtype)?)
}

/// Adaptive average pooling of `(N, T_in, C)` along time.
pub fn adaptive_pool(x: &Tensor, t_out: usize) -> Result<Tensor> {
    let (n, t_in, c) = x.dims3()?;
    if t_in == t_out {
        return Ok(x.clone());
    }
    let p = adaptive_pool_matrix(t_in, t_out, x.dtype())?;
    Ok(p.broadcast_as((n, t_out, t_in))?.matmul(&x.contiguous()?)?.reshape((n, t_out, c))?)
}

/// Cosine self-similarity of each token pair: `(N, T, C) -> (N, T, T)`, exactly symmetric.
pub fn cosine_ssm(u: &Tensor) -> Result<Tensor> {
    let norm = (u.sqr()?.sum_keepdim(2)? + NORM_EPS)?.sqrt()?;
    let un = u.broadcast_div(&norm)?;
    let m = un.matmul(&un.transpose(1, 2)?.contiguous()?)?;
    Ok(((&m + m.transpose(1, 2)?)? * 0.5)?)
}

/// Re-indexes `(N, T, T)` so that `out[n, j, d] = m[n, j, j + d]`, zero where `j + d >= T`.
pub fn skew(m: &Tensor) -> Result<Tensor> {
    let (n, t, _) = m.dims3()?;
    let flat = m.pad_with_zeros(2, 0, t)?.reshape((n, 2 * t * t))?;
    let flat = flat.pad_with_zeros(1, 0, t)?;
    Ok(flat.reshape((n, t, 2 * t + 1))?.narrow(2, 0, t)?)
}

/// Element count of each upper diagonal: `T - d`.
fn diag_lengths(t: usize, dtype: DType) -> Result<Tensor> {
    let v: Vec<f64> = (0..t).map(|d| (t - d) as f64).collect();
    Ok(Tensor::from_vec(v, (1, t), &Device::Cpu)?.to_dtype(dtype)?)
}

/// 1 where `j + d < T`, else 0; shape `(1, T, T)`.
fn skew_mask(t: usize, dtype: DType) -> Result<Tensor> {
    let mut v = vec![0.0f64; t * t];
    for j in 0..t {
        for d in 0..t - j {
            v[j * t + d] = 1.0;
        }
    }
    Ok(Tensor::from_vec(v, (1, t, t), &Device::Cpu)?.to_dtype(dtype)?)
}

/// Per-lag mean of the upper diagonals: `(N, T, T) -> (N, T)`.
pub fn ssw(m: &Tensor) -> Result<Tensor> {
    let t = m.dim(1)?;
    Ok(skew(m)?.sum(1)?.broadcast_div(&diag_lengths(t, m.dtype())?)?)
}

/// Population standard deviation of each upper diagonal: `(N, T, T) -> (N, T)`.
pub fn diagonal_sd(m: &Tensor) -> Result<Tensor> {
    let t = m.dim(1)?;
    let dtype = m.dtype();
    let lengths = diag_lengths(t, dtype)?;
    let y = skew(m)?;
    let mean = y.sum(1)?.broadcast_div(&lengths)?;
    let centered = y
        .broadcast_sub(&mean.unsqueeze(1)?)?
        .broadcast_mul(&skew_mask(t, dtype)?)?;
    let var = centered.sqr()?.sum(1)?.broadcast_div(&lengths)?;
    Ok(safe_sqrt(&var)?)
}

/// Real DFT basis `(T, T/2)` for bins `1..=T/2`: cosine and sine parts.
pub fn dft_basis(t: usize, dtype: DType) -> Result<(Tensor, Tensor)> {
    let f = t / 2;
    let mut cos = vec![0.0f64; t * f];
    let mut sin = vec![0.0f64; t * f];
    for n in 0..t {
        for k in 1..=f {
            // Reduce the phase index mod T to keep the argument small.
            let ang = 2.0 * std::f64::consts::PI * ((n * k) % t) as f64 / t as f64;
            cos[n * f + k - 1] = ang.cos();
            sin[n * f + k - 1] = ang.sin();
        }
    }
    Ok((
        Tensor::from_vec(cos, (t, f), &Device::Cpu)?.to_dtype(dtype)?,
        Tensor::from_vec(sin, (t, f), &Device::Cpu)?.to_dtype(dtype)?,
    ))
}

/// Unit-sum one-sided power spectrum of each row of `(N, T)`, mean removed, DC excluded.
pub fn psd(x: &Tensor) -> Result<Tensor> {
    let t = x.dim(1)?;
    let (cos, sin) = dft_basis(t, x.dtype())?;
    let xc = x.broadcast_sub(&x.mean_keepdim(1)?)?;
    let re = xc.matmul(&cos)?;
    let im = xc.matmul(&sin)?;
    let p = (re.sqr()? + im.sqr()?)?;
    Ok(p.broadcast_div(&p.sum_keepdim(1)?)?)
}

/// 1 for bins whose frequency lies in `[lo, hi]`; shape `(1, T/2)`.
pub fn band_mask(t: usize, fs: f64, lo: f64, hi: f64, dtype: DType) -> Result<Tensor> {
    let v: Vec<f64> = crate::signal::psd_freqs(t, fs)
        .into_iter()
        .map(|f| if f >= lo && f <= hi { 1.0 } else { 0.0 })
        .collect();
    let f = v.len();
    Ok(Tensor::from_vec(v, (1, f), &Device::Cpu)?.to_dtype(dtype)?)
}

/// Pearson correlation of matching rows of `(N, T)` tensors.
pub fn pearson_rows(x: &Tensor, y: &Tensor) -> Result<Tensor> {
    let xc = x.broadcast_sub(&x.mean_keepdim(1)?)?;
    let yc = y.broadcast_sub(&y.mean_keepdim(1)?)?;
    let num = (&xc * &yc)?.sum(1)?;
    let den = (xc.sqr()?.sum(1)?.sqrt()? * yc.sqr()?.sum(1)?.sqrt()?)?;
    Ok((num / den)?)
}

/// Scalar value of a rank-0 tensor as `f64`.
pub fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

/// Rows of an `(N, ...)` tensor flattened to `f64` vectors.
pub fn rows_f64(t: &Tensor) -> Result<Vec<Vec<f64>>> {
    let n = t.dim(0)?;
    let flat = t.to_dtype(DType::F64)?.reshape((n, ()))?;
    Ok(flat.to_vec2::<f64>()?)
}
