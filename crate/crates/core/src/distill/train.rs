use candle_core::{DType, Tensor};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::adam::{Adam, AdamConfig};
use super::ema::{ema_update, EmaSchedule};
use super::losses::{self, DistillTarget, LossBreakdown};
use crate::augment::{self, AugmentConfig, VideoClip};
use crate::data::{self, DatasetRecord};
use crate::error::{Result, SspdError};
use crate::model::{batch_tensor, ops, Network, ParamStore, ParamView};

/// Weights and constants of the training objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub alpha: f64,
    pub beta: f64,
    pub epsilon: f64,
    pub snr_band: (f64, f64),
    pub fs: f64,
    pub distill_target: DistillTarget,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            alpha: 0.8,
            beta: 0.6,
            epsilon: 0.05,
            snr_band: (crate::signal::HR_BAND_LO, crate::signal::HR_BAND_HI),
            fs: 30.0,
            distill_target: DistillTarget::Pyramid,
        }
    }
}

/// Online and target parameters, optimizer state and progress counters.
#[derive(Debug, Clone)]
pub struct ModelState {
    pub online: ParamStore,
    pub target: ParamStore,
    pub adam: Adam,
    pub epoch: usize,
    pub step: u64,
}

impl ModelState {
    /// Fresh state: the target starts as an exact copy of the online network.
    pub fn new(net: &Network, dtype: DType, seed: u64, adam: AdamConfig) -> Result<Self> {
        let online = net.init_params(dtype, seed)?;
        let target = online.deep_clone()?;
        Ok(Self {
            online,
            target,
            adam: Adam::new(adam),
            epoch: 0,
            step: 0,
        })
    }
}

/// Loss tensors (for backward) together with their scalar values.
#[derive(Debug, Clone)]
pub struct Objective {
    pub total: Tensor,
    pub parts: LossBreakdown,
}

/// Full objective for one batch: online sees `v_online`, target sees `v_target`.
pub fn objective(
    net: &Network,
    online: &ParamView,
    target: &ParamView,
    v_online: &Tensor,
    v_target: &Tensor,
    cfg: &LossConfig,
) -> Result<Objective> {
    let out_o = net.forward(online, v_online)?;
    let out_t = net.forward(target, v_target)?;
    let distill = match cfg.distill_target {
        DistillTarget::Pyramid => losses::tspd_loss(&out_o.pyramid, &out_t.pyramid)?,
        DistillTarget::Tokens => losses::token_mse_loss(&out_o.features, &out_t.features)?,
    };
    let rpd = losses::rpd_loss(&out_o.rppg, &out_t.rppg)?;
    let sd = losses::sd_regularization(&out_o.pyramid, cfg.epsilon)?;
    let snr = losses::snr_regularization(&out_o.pyramid, &out_o.rppg, cfg.fs, cfg.snr_band)?;
    let parts = losses::total_loss(
        ops::scalar(&distill)?,
        ops::scalar(&rpd)?,
        ops::scalar(&sd)?,
        ops::scalar(&snr)?,
        cfg.alpha,
        cfg.beta,
    )?;
    let total = (((distill + rpd)? + (sd * cfg.alpha)?)? + (snr * cfg.beta)?)?;
    Ok(Objective { total, parts })
}

/// Augmented inputs for a batch: masked local differences for the online
/// network and clean global differences for the target.
pub fn prepare_batch(clips: &[VideoClip], aug: &AugmentConfig, clip_indices: &[u64], dtype: DType) -> Result<(Tensor, Tensor)> {
    if clips.is_empty() || clips.len() != clip_indices.len() {
        return Err(SspdError::Shape(format!(
            "{} clips with {} indices",
            clips.len(),
            clip_indices.len()
        )));
    }
    let mut masked = Vec::with_capacity(clips.len());
    let mut original = Vec::with_capacity(clips.len());
    let mut steps = None;
    for (clip, &idx) in clips.iter().zip(clip_indices) {
        let mut rng = augment::clip_rng(aug.seed, idx);
        let views = augment::local_global_views(clip, aug, &mut rng);
        let d = augment::masked_difference(&views, aug, &mut rng);
        if *steps.get_or_insert(d.n_steps) != d.n_steps {
            return Err(SspdError::Shape("clips in a batch must have equal length".into()));
        }
        masked.push(d.masked);
        original.push(d.original);
    }
    let t = steps.unwrap_or(0);
    let s = aug.view_size;
    let vm = batch_tensor(&masked.iter().map(Vec::as_slice).collect::<Vec<_>>(), t, 3, s, dtype)?;
    let vo = batch_tensor(&original.iter().map(Vec::as_slice).collect::<Vec<_>>(), t, 3, s, dtype)?;
    Ok((vm, vo))
}

/// One optimizer step on the online network followed by the EMA update of the target.
pub fn train_step(
    net: &Network,
    state: &mut ModelState,
    v_online: &Tensor,
    v_target: &Tensor,
    cfg: &LossConfig,
    rho: f64,
) -> Result<LossBreakdown> {
    let obj = objective(net, &state.online.view(true), &state.target.view(false), v_online, v_target, cfg)?;
    let grads = obj.total.backward()?;
    state.adam.step(&state.online, &grads)?;
    ema_update(&state.target, &state.online, rho)?;
    state.step += 1;
    Ok(obj.parts)
}

/// Everything the training loop needs besides data.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSettings {
    pub epochs: usize,
    pub batch: usize,
    pub clip_s: f64,
    pub preprocess_size: usize,
    pub augment: AugmentConfig,
    pub loss: LossConfig,
    pub schedule: EmaSchedule,
    pub seed: u64,
}

/// One line of the training log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLog {
    pub epoch: usize,
    pub step: u64,
    pub parts: LossBreakdown,
    pub rho: f64,
}

impl StepLog {
    pub const CSV_HEADER: &'static str = "epoch,step,tspd,rpd,sd,snr,total,rho";

    pub fn csv_row(&self) -> String {
        let p = &self.parts;
        format!(
            "{},{},{},{},{},{},{},{}",
            self.epoch, self.step, p.tspd, p.rpd, p.sd, p.snr, p.total, self.rho
        )
    }
}

const ORDER_STREAM: u64 = 1 << 40;
const SAMPLE_STREAM: u64 = 1 << 41;

/// Runs epochs `state.epoch..settings.epochs`. Every epoch visits each record
/// once in a seeded random order, sampling one training clip per visit.
pub fn fit(
    net: &Network,
    state: &mut ModelState,
    records: &[DatasetRecord],
    settings: &TrainSettings,
    mut on_step: impl FnMut(&StepLog) -> Result<()>,
    mut on_epoch: impl FnMut(&ModelState) -> Result<()>,
) -> Result<()> {
    if records.is_empty() {
        return Err(SspdError::Usage("training needs at least one record".into()));
    }
    let dtype = state.online.dtype();
    while state.epoch < settings.epochs {
        let epoch = state.epoch;
        let rho = settings.schedule.rho(epoch)?;
        let mut order: Vec<usize> = (0..records.len()).collect();
        order.shuffle(&mut augment::clip_rng(settings.seed, ORDER_STREAM + epoch as u64));
        for (b, chunk) in order.chunks(settings.batch).enumerate() {
            let mut clips = Vec::with_capacity(chunk.len());
            let mut indices = Vec::with_capacity(chunk.len());
            for (j, &r) in chunk.iter().enumerate() {
                let idx = (epoch * records.len() + b * settings.batch + j) as u64;
                let mut rng = augment::clip_rng(settings.seed, SAMPLE_STREAM + idx);
                let raw = data::sample_training_clip(&records[r], settings.clip_s, &mut rng)?;
                clips.push(augment::preprocess_clip(&raw, settings.preprocess_size)?);
                indices.push(idx);
            }
            let (vm, vo) = prepare_batch(&clips, &settings.augment, &indices, dtype)?;
            let parts = train_step(net, state, &vm, &vo, &settings.loss, rho)?;
            on_step(&StepLog { epoch, step: state.step, parts, rho })?;
        }
        state.epoch += 1;
        on_epoch(state)?;
    }
    Ok(())
}
