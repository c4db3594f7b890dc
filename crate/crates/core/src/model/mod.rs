//! The self-similarity-aware network: a spatio-temporal convolutional
//! backbone, a predictor head on the detached feature map, and a stack of
//! temporal similarity blocks that is only needed for training.
//!
//! All activations use the `(N, T, C, H, W)` layout. Parameters live in a
//! [`ParamStore`] keyed by dotted names; the network itself only holds the
//! architecture.

pub mod conv;
pub mod cost;
pub mod ops;
pub mod params;

use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SspdError};
use crate::signal::{SelfSimilarityMap, SelfSimilarityWave};
pub use cost::{count_cost, Cost};
pub use params::{Init, ParamStore, ParamView};

pub const BACKBONE_PREFIX: &str = "backbone.";
pub const PREDICTOR_PREFIX: &str = "predictor.";
pub const S3M_PREFIX: &str = "s3m.";

const SPATIAL_K: usize = 3;
const TEMPORAL_K: usize = 3;
const MIN_FRAMES: usize = 16;

/// How each temporal similarity block shortens its input sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum TokenizerKind {
    /// Valid temporal convolution of width `w_i`: `T_i = T_{i-1} - w_i + 1`.
    #[default]
    Conv,
    /// Halve the length by adaptive pooling before the convolution (blocks after the first).
    Halving,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub in_channels: usize,
    pub block_channels: Vec<usize>,
    pub windows: Vec<usize>,
    pub heads: usize,
    pub predictor_kernel: usize,
    pub tokenizer: TokenizerKind,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            in_channels: 3,
            block_channels: vec![32, 64, 128, 256],
            windows: vec![9, 7, 5],
            heads: 4,
            predictor_kernel: 5,
            tokenizer: TokenizerKind::Conv,
        }
    }
}

impl ModelConfig {
    pub fn feature_dim(&self) -> usize {
        *self.block_channels.last().unwrap_or(&0)
    }

    pub fn depth(&self) -> usize {
        self.windows.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(SspdError::Config(m));
        if self.in_channels == 0 {
            return bad("model.in_channels must be positive".into());
        }
        if self.block_channels.is_empty() || self.block_channels.contains(&0) {
            return bad("model.block_channels must be a nonempty list of positive widths".into());
        }
        if self.windows.is_empty() {
            return bad("model.windows must list at least one block".into());
        }
        if let Some(w) = self.windows.iter().find(|&&w| w < 3 || w % 2 == 0) {
            return bad(format!("model.windows entries must be odd and >= 3, got {w}"));
        }
        let c = self.feature_dim();
        if self.heads == 0 || c % self.heads != 0 {
            return bad(format!("model.heads = {} must divide the feature dim {c}", self.heads));
        }
        if c < 4 {
            return bad(format!("feature dim {c} too small for the predictor"));
        }
        if self.predictor_kernel == 0 || self.predictor_kernel % 2 == 0 {
            return bad("model.predictor_kernel must be odd".into());
        }
        Ok(())
    }

    /// Token count of every pyramid layer for an input sequence of length `t`.
    pub fn token_counts(&self, t: usize) -> Result<Vec<usize>> {
        let mut len = t;
        let mut out = Vec::with_capacity(self.windows.len());
        for (i, &w) in self.windows.iter().enumerate() {
            let input = match self.tokenizer {
                TokenizerKind::Halving if i > 0 => len / 2,
                _ => len,
            };
            if w >= input {
                return Err(SspdError::InvalidScale { window: w, len: input });
            }
            len = input - w + 1;
            out.push(len);
        }
        Ok(out)
    }

    /// Input side length whose backbone output is `side / 2^blocks`.
    pub fn output_side(&self, input: usize) -> usize {
        input >> self.block_channels.len()
    }
}

/// One pyramid layer per block, batched: maps `(N, T_i, T_i)` and waves `(N, T_i)`.
#[derive(Debug, Clone)]
pub struct Pyramid {
    pub maps: Vec<Tensor>,
    pub waves: Vec<Tensor>,
}

impl Pyramid {
    pub fn depth(&self) -> usize {
        self.maps.len()
    }

    pub fn detach(&self) -> Self {
        Self {
            maps: self.maps.iter().map(Tensor::detach).collect(),
            waves: self.waves.iter().map(Tensor::detach).collect(),
        }
    }

    /// Layer list of sample `n` as plain maps and waves.
    pub fn sample(&self, n: usize) -> Result<TemporalSimilarityPyramid> {
        let mut layers = Vec::with_capacity(self.maps.len());
        for (m, w) in self.maps.iter().zip(&self.waves) {
            let t = m.dim(1)?;
            let values = m.get(n)?.to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?;
            let map = SelfSimilarityMap::from_upper(t, &values)?;
            let wave = SelfSimilarityWave(w.get(n)?.to_dtype(DType::F64)?.to_vec1::<f64>()?);
            layers.push((map, wave));
        }
        Ok(TemporalSimilarityPyramid { layers })
    }
}

/// Ordered (map, wave) pairs of one sample.
#[derive(Debug, Clone)]
pub struct TemporalSimilarityPyramid {
    pub layers: Vec<(SelfSimilarityMap, SelfSimilarityWave)>,
}

impl TemporalSimilarityPyramid {
    pub fn token_counts(&self) -> Vec<usize> {
        self.layers.iter().map(|(m, _)| m.size()).collect()
    }
}

/// Everything one forward pass produces during training.
#[derive(Debug, Clone)]
pub struct NetworkOutputs {
    /// `(N, T)`
    pub rppg: Tensor,
    pub pyramid: Pyramid,
    /// `(N, T, C)`
    pub features: Tensor,
}

/// Outputs of one temporal similarity block.
#[derive(Debug, Clone)]
pub struct TsOutput {
    /// `(N, T_i, C)` input of the next block.
    pub next: Tensor,
    /// `(N, T_i, C)` projected tokens.
    pub tokens: Tensor,
    pub ssm: Tensor,
    pub ssw: Tensor,
}

#[derive(Debug, Clone)]
pub struct Network {
    cfg: ModelConfig,
}

fn conv_name(block: usize, part: &str) -> String {
    format!("{BACKBONE_PREFIX}b{block}.{part}")
}

fn ts_name(layer: usize, part: &str) -> String {
    format!("{S3M_PREFIX}l{layer}.{part}")
}

/// Softmax-free multi-head attention: per head `(Q_h K_h^T / C) V_h`, heads concatenated.
///
/// `q`, `k`, `v` are `(N, T, C)`; `C` in the scale is the full model width.
pub fn linear_attention(q: &Tensor, k: &Tensor, v: &Tensor, heads: usize) -> Result<Tensor> {
    let (n, t, c) = q.dims3()?;
    let dh = c / heads;
    let split = |x: &Tensor| -> Result<Tensor> {
        Ok(x.reshape((n, t, heads, dh))?.transpose(1, 2)?.contiguous()?.reshape((n * heads, t, dh))?)
    };
    let (qh, kh, vh) = (split(q)?, split(k)?, split(v)?);
    let scores = (qh.matmul(&kh.transpose(1, 2)?.contiguous()?)? / c as f64)?;
    let a = scores.matmul(&vh)?;
    Ok(a.reshape((n, heads, t, dh))?.transpose(1, 2)?.contiguous()?.reshape((n, t, c))?)
}

impl Network {
    pub fn new(cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    /// Fresh parameters for the whole network, drawn from a seeded stream.
    pub fn init_params(&self, dtype: DType, seed: u64) -> Result<ParamStore> {
        let mut rng = ParamStore::seeded_rng(seed);
        let mut store = ParamStore::new(dtype);
        let mut cin = self.cfg.in_channels;
        for (b, &co) in self.cfg.block_channels.iter().enumerate() {
            store.init(
                &conv_name(b, "spatial.weight"),
                &[co, cin, SPATIAL_K, SPATIAL_K],
                Init::Kaiming { fan_in: cin * SPATIAL_K * SPATIAL_K },
                &mut rng,
            )?;
            store.init(&conv_name(b, "bn1.gamma"), &[co], Init::Const(1.0), &mut rng)?;
            store.init(&conv_name(b, "bn1.beta"), &[co], Init::Const(0.0), &mut rng)?;
            store.init(
                &conv_name(b, "temporal.weight"),
                &[co, co, TEMPORAL_K, 1],
                Init::Kaiming { fan_in: co * TEMPORAL_K },
                &mut rng,
            )?;
            store.init(&conv_name(b, "bn2.gamma"), &[co], Init::Const(1.0), &mut rng)?;
            store.init(&conv_name(b, "bn2.beta"), &[co], Init::Const(0.0), &mut rng)?;
            cin = co;
        }
        let c = self.cfg.feature_dim();
        let k = self.cfg.predictor_kernel;
        let hidden = c / 4;
        for (name, rows, cols) in [("conv1", k * c, hidden), ("conv2", k * hidden, 1)] {
            let fan_in = rows;
            store.init(&format!("{PREDICTOR_PREFIX}{name}.weight"), &[rows, cols], Init::Uniform { fan_in }, &mut rng)?;
            store.init(&format!("{PREDICTOR_PREFIX}{name}.bias"), &[cols], Init::Uniform { fan_in }, &mut rng)?;
        }
        for (i, &w) in self.cfg.windows.iter().enumerate() {
            store.init(&ts_name(i, "tok.weight"), &[w * c, c], Init::Uniform { fan_in: w * c }, &mut rng)?;
            store.init(&ts_name(i, "tok.bias"), &[c], Init::Uniform { fan_in: w * c }, &mut rng)?;
            for part in ["q", "k", "v", "proj"] {
                store.init(&ts_name(i, &format!("{part}.weight")), &[c, c], Init::Uniform { fan_in: c }, &mut rng)?;
                store.init(&ts_name(i, &format!("{part}.bias")), &[c], Init::Uniform { fan_in: c }, &mut rng)?;
            }
        }
        Ok(store)
    }

    fn check_input(&self, v: &Tensor) -> Result<(usize, usize, usize)> {
        let (n, t, c, h, w) = v
            .dims5()
            .map_err(|_| SspdError::Shape(format!("expected (N, T, C, H, W) input, got {:?}", v.dims())))?;
        let blocks = self.cfg.block_channels.len();
        if c != self.cfg.in_channels {
            return Err(SspdError::Shape(format!("expected {} input channels, got {c}", self.cfg.in_channels)));
        }
        if h != w || h % (1 << blocks) != 0 || h >> blocks == 0 {
            return Err(SspdError::Shape(format!(
                "input frames must be square with side divisible by {}, got {h}x{w}",
                1 << blocks
            )));
        }
        if t < MIN_FRAMES {
            return Err(SspdError::Shape(format!("need at least {MIN_FRAMES} difference frames, got {t}")));
        }
        Ok((n, t, h))
    }

    /// `(N, T, 3, H, W)` differences to the final feature map `(N, T, C, H/2^B, W/2^B)`
    /// and its spatial mean `(N, T, C)`.
    pub fn backbone_forward(&self, p: &ParamView, v: &Tensor) -> Result<(Tensor, Tensor)> {
        self.check_input(v)?;
        let mut x = v.to_dtype(p.dtype())?;
        for b in 0..self.cfg.block_channels.len() {
            x = ops::avg_pool2(&x)?;
            x = ops::spatial_conv(&x, &p.get(&conv_name(b, "spatial.weight"))?)?;
            x = ops::batch_norm(&x, &p.get(&conv_name(b, "bn1.gamma"))?, &p.get(&conv_name(b, "bn1.beta"))?)?.relu()?;
            x = ops::temporal_conv(&x, &p.get(&conv_name(b, "temporal.weight"))?)?;
            x = ops::batch_norm(&x, &p.get(&conv_name(b, "bn2.gamma"))?, &p.get(&conv_name(b, "bn2.beta"))?)?.relu()?;
        }
        let s = x.mean((3, 4))?;
        Ok((x, s))
    }

    /// Feature map to one sample per frame, `(N, T)`. The map is detached first,
    /// so losses on this output never reach the backbone.
    pub fn predictor_forward(&self, p: &ParamView, feature_map: &Tensor) -> Result<Tensor> {
        let k = self.cfg.predictor_kernel;
        let pooled = feature_map.detach().mean((3, 4))?;
        let h = ops::seq_conv(
            &pooled,
            &p.get(&format!("{PREDICTOR_PREFIX}conv1.weight"))?,
            Some(&p.get(&format!("{PREDICTOR_PREFIX}conv1.bias"))?),
            k / 2,
            k / 2,
        )?
        .relu()?;
        let y = ops::seq_conv(
            &h,
            &p.get(&format!("{PREDICTOR_PREFIX}conv2.weight"))?,
            Some(&p.get(&format!("{PREDICTOR_PREFIX}conv2.bias"))?),
            k / 2,
            k / 2,
        )?;
        Ok(y.squeeze(2)?)
    }

    /// One temporal similarity block on `(N, T_{i-1}, C)`.
    pub fn ts_block_forward(&self, p: &ParamView, layer: usize, s: &Tensor) -> Result<TsOutput> {
        let w = *self
            .cfg
            .windows
            .get(layer)
            .ok_or_else(|| SspdError::Shape(format!("no temporal similarity block {layer}")))?;
        let t_in = s.dim(1)?;
        let input = match self.cfg.tokenizer {
            TokenizerKind::Halving if layer > 0 => ops::adaptive_pool(s, t_in / 2)?,
            _ => s.clone(),
        };
        if w >= input.dim(1)? {
            return Err(SspdError::InvalidScale { window: w, len: input.dim(1)? });
        }
        let e = ops::seq_conv(&input, &p.get(&ts_name(layer, "tok.weight"))?, Some(&p.get(&ts_name(layer, "tok.bias"))?), 0, 0)?;
        let lin = |part: &str, x: &Tensor| -> Result<Tensor> {
            ops::linear(x, &p.get(&ts_name(layer, &format!("{part}.weight")))?, &p.get(&ts_name(layer, &format!("{part}.bias")))?)
        };
        let a = linear_attention(&lin("q", &e)?, &lin("k", &e)?, &lin("v", &e)?, self.cfg.heads)?;
        let u = lin("proj", &a)?;
        let ssm = ops::cosine_ssm(&u)?;
        let ssw = ops::ssw(&ssm)?;
        let t_out = u.dim(1)?;
        let next = (ops::adaptive_pool(s, t_out)? + &u)?;
        Ok(TsOutput { next, tokens: u, ssm, ssw })
    }

    /// Chains every block and collects their maps and waves. The features are
    /// centered over time per channel first.
    pub fn s3m_forward(&self, p: &ParamView, s: &Tensor) -> Result<Pyramid> {
        let mut x = s.broadcast_sub(&s.mean_keepdim(1)?)?;
        let mut maps = Vec::with_capacity(self.cfg.depth());
        let mut waves = Vec::with_capacity(self.cfg.depth());
        for layer in 0..self.cfg.depth() {
            let out = self.ts_block_forward(p, layer, &x)?;
            maps.push(out.ssm);
            waves.push(out.ssw);
            x = out.next;
        }
        Ok(Pyramid { maps, waves })
    }

    pub fn forward(&self, p: &ParamView, v: &Tensor) -> Result<NetworkOutputs> {
        let (fmap, s) = self.backbone_forward(p, v)?;
        let rppg = self.predictor_forward(p, &fmap)?;
        let pyramid = self.s3m_forward(p, &s)?;
        Ok(NetworkOutputs { rppg, pyramid, features: s })
    }

    /// Backbone and predictor only; the similarity blocks are never touched.
    pub fn inference_forward(&self, p: &ParamView, v: &Tensor) -> Result<Tensor> {
        let (fmap, _) = self.backbone_forward(p, v)?;
        self.predictor_forward(p, &fmap)
    }
}

/// Stacks difference clips `(T, 3, S, S)` into a batch `(N, T, 3, S, S)`.
pub fn batch_tensor(clips: &[&[f32]], t: usize, channels: usize, size: usize, dtype: DType) -> Result<Tensor> {
    let per = t * channels * size * size;
    let mut flat = Vec::with_capacity(per * clips.len());
    for c in clips {
        if c.len() != per {
            return Err(SspdError::Shape(format!("difference clip has {} values, expected {per}", c.len())));
        }
        flat.extend_from_slice(c);
    }
    Ok(Tensor::from_vec(flat, (clips.len(), t, channels, size, size), &candle_core::Device::Cpu)?.to_dtype(dtype)?)
}

/// Parameter count of the inference path.
pub fn inference_param_count(store: &ParamStore) -> usize {
    store.count(Some(BACKBONE_PREFIX)) + store.count(Some(PREDICTOR_PREFIX))
}
