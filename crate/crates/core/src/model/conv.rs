//! Custom autograd ops.
//!
//! `Conv2dOp` runs candle's im2col convolution forward and expresses the
//! input gradient as another forward convolution with the flipped,
//! channel-transposed kernel. Candle's stock backward goes through a direct
//! transposed-convolution loop that is several times slower than the forward
//! pass on CPU.

use candle_core::backend::BackendStorage;
use candle_core::{CpuStorage, CustomOp1, CustomOp2, Device, Layout, Shape, Tensor};

fn storage_to_tensor(s: &CpuStorage, l: &Layout) -> candle_core::Result<Tensor> {
    let (start, end) = l
        .contiguous_offsets()
        .ok_or_else(|| candle_core::Error::Msg("conv op expects contiguous inputs".into()))?;
    match s {
        CpuStorage::F32(v) => Tensor::from_slice(&v[start..end], l.shape(), &Device::Cpu),
        CpuStorage::F64(v) => Tensor::from_slice(&v[start..end], l.shape(), &Device::Cpu),
        other => Err(candle_core::Error::UnsupportedDTypeForOp(other.dtype(), "sspd-conv2d")),
    }
}

fn tensor_to_storage(t: &Tensor) -> candle_core::Result<CpuStorage> {
    let flat = t.flatten_all()?;
    match t.dtype() {
        candle_core::DType::F32 => Ok(CpuStorage::F32(flat.to_vec1::<f32>()?)),
        candle_core::DType::F64 => Ok(CpuStorage::F64(flat.to_vec1::<f64>()?)),
        dt => Err(candle_core::Error::UnsupportedDTypeForOp(dt, "sspd-conv2d")),
    }
}

/// Stride-1, dilation-1 convolution over `(B, C_in, H, W)` with kernel `(C_out, C_in, kH, kW)`.
#[derive(Debug, Clone, Copy)]
pub struct Conv2dOp {
    pub padding: usize,
}

impl CustomOp2 for Conv2dOp {
    fn name(&self) -> &'static str {
        "sspd-conv2d"
    }

    fn cpu_fwd(
        &self,
        s1: &CpuStorage,
        l1: &Layout,
        s2: &CpuStorage,
        l2: &Layout,
    ) -> candle_core::Result<(CpuStorage, Shape)> {
        let x = storage_to_tensor(s1, l1)?;
        let k = storage_to_tensor(s2, l2)?;
        let y = x.conv2d(&k, self.padding, 1, 1, 1)?;
        let shape = y.shape().clone();
        Ok((tensor_to_storage(&y)?, shape))
    }

    fn bwd(
        &self,
        x: &Tensor,
        k: &Tensor,
        _res: &Tensor,
        grad: &Tensor,
    ) -> candle_core::Result<(Option<Tensor>, Option<Tensor>)> {
        let (_, _, kh, kw) = k.dims4()?;
        let p = self.padding;
        let grad = grad.contiguous()?;
        let grad_x = if x.track_op() {
            let flipped = k.transpose(0, 1)?.contiguous()?.flip(&[2, 3])?.contiguous()?;
            let padded = grad
                .pad_with_zeros(2, kh - 1 - p, kh - 1 - p)?
                .pad_with_zeros(3, kw - 1 - p, kw - 1 - p)?
                .contiguous()?;
            Some(padded.apply_op2_no_bwd(&flipped, &Conv2dOp { padding: 0 })?)
        } else {
            None
        };
        let grad_k = x
            .transpose(0, 1)?
            .conv2d(&grad.transpose(0, 1)?, p, 1, 1, 1)?
            .transpose(0, 1)?;
        let grad_k = grad_k.narrow(2, 0, kh)?.narrow(3, 0, kw)?.contiguous()?;
        Ok((grad_x, Some(grad_k)))
    }
}

/// Convolution with padding `p <= k - 1` on both spatial dimensions.
pub fn conv2d(x: &Tensor, kernel: &Tensor, padding: usize) -> candle_core::Result<Tensor> {
    let (_, _, kh, kw) = kernel.dims4()?;
    if padding + 1 > kh || padding + 1 > kw {
        return Err(candle_core::Error::Msg(format!(
            "padding {padding} too large for a {kh}x{kw} kernel"
        )));
    }
    x.contiguous()?.apply_op2(&kernel.contiguous()?, Conv2dOp { padding })
}

/// Square root whose gradient is taken as zero at the origin.
#[derive(Debug, Clone, Copy)]
pub struct SafeSqrt;

impl CustomOp1 for SafeSqrt {
    fn name(&self) -> &'static str {
        "sspd-safe-sqrt"
    }

    fn cpu_fwd(&self, s: &CpuStorage, l: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        let (start, end) = l
            .contiguous_offsets()
            .ok_or_else(|| candle_core::Error::Msg("safe-sqrt expects contiguous input".into()))?;
        let out = match s {
            CpuStorage::F32(v) => CpuStorage::F32(v[start..end].iter().map(|x| x.max(0.0).sqrt()).collect()),
            CpuStorage::F64(v) => CpuStorage::F64(v[start..end].iter().map(|x| x.max(0.0).sqrt()).collect()),
            other => return Err(candle_core::Error::UnsupportedDTypeForOp(other.dtype(), "safe-sqrt")),
        };
        Ok((out, l.shape().clone()))
    }

    fn bwd(&self, _arg: &Tensor, res: &Tensor, grad: &Tensor) -> candle_core::Result<Option<Tensor>> {
        let positive = res.gt(0.0)?;
        let denom = positive.where_cond(&(res * 2.0)?, &res.ones_like()?)?;
        let g = (grad / denom)?;
        Ok(Some(positive.where_cond(&g, &g.zeros_like()?)?))
    }
}

pub fn safe_sqrt(x: &Tensor) -> candle_core::Result<Tensor> {
    x.contiguous()?.apply_op1(SafeSqrt)
}
