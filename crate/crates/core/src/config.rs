//! Run configuration, read from and dumped to TOML.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::augment::AugmentConfig;
use crate::distill::{AdamConfig, DistillTarget, EmaSchedule, LossConfig, TrainSettings};
use crate::error::{Result, SspdError};
use crate::model::ModelConfig;
use crate::signal::{HR_BAND_HI, HR_BAND_LO};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
    pub clip_train_s: f64,
    pub alpha: f64,
    pub beta: f64,
    pub epsilon: f64,
    pub rho_start: f64,
    pub rho_end: f64,
    pub snr_band: (f64, f64),
    pub distill_target: DistillTarget,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            epochs: 50,
            lr: 1e-3,
            batch: 8,
            clip_train_s: 10.0,
            alpha: 0.8,
            beta: 0.6,
            epsilon: 0.05,
            rho_start: 0.9,
            rho_end: 1.0,
            snr_band: (HR_BAND_LO, HR_BAND_HI),
            distill_target: DistillTarget::Pyramid,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentSection {
    pub p: f64,
    pub crop_scale: (f64, f64),
    pub flip_prob: f64,
    pub noise_std: f64,
    pub input_size: usize,
    pub preprocess_size: usize,
}

impl Default for AugmentSection {
    fn default() -> Self {
        let a = AugmentConfig::default();
        Self {
            p: a.p,
            crop_scale: a.crop_scale,
            flip_prob: a.flip_prob,
            noise_std: a.noise_std,
            input_size: crate::augment::VIEW_SIZE,
            preprocess_size: crate::augment::PREPROCESS_SIZE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub clip_eval_s: f64,
    /// Band-pass the predicted signal to the heart-rate band before peak picking.
    pub hr_bandpass: bool,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            clip_eval_s: 30.0,
            hr_bandpass: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub train: TrainSection,
    pub augment: AugmentSection,
    pub model: ModelConfig,
    pub eval: EvalSection,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| SspdError::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| SspdError::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            SspdError::Config(m) => SspdError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Short digest of the effective configuration.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        hex::encode(&digest[..4])
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(SspdError::Config(m));
        let t = &self.train;
        if t.epochs == 0 {
            return bad("train.epochs must be positive".into());
        }
        if !(t.lr > 0.0 && t.lr.is_finite()) {
            return bad(format!("train.lr {} must be positive", t.lr));
        }
        if t.batch == 0 {
            return bad("train.batch must be positive".into());
        }
        if !(t.clip_train_s > 0.0) {
            return bad("train.clip_train_s must be positive".into());
        }
        for (name, v) in [("alpha", t.alpha), ("beta", t.beta), ("epsilon", t.epsilon)] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("train.{name} = {v} must be >= 0"));
            }
        }
        if !(t.snr_band.0 >= 0.0 && t.snr_band.0 < t.snr_band.1) {
            return bad(format!("train.snr_band {:?} must be an increasing pair", t.snr_band));
        }
        EmaSchedule::new(t.rho_start, t.rho_end, t.epochs)?;
        self.augment_config().validate()?;
        let a = &self.augment;
        if a.preprocess_size < a.input_size {
            return bad(format!(
                "augment.preprocess_size {} is smaller than augment.input_size {}",
                a.preprocess_size, a.input_size
            ));
        }
        let blocks = self.model.block_channels.len();
        if a.input_size % (1 << blocks) != 0 {
            return bad(format!(
                "augment.input_size {} must be divisible by 2^{blocks} for {blocks} backbone blocks",
                a.input_size
            ));
        }
        self.model.validate()?;
        if !(self.eval.clip_eval_s > 0.0) {
            return bad("eval.clip_eval_s must be positive".into());
        }
        Ok(())
    }

    pub fn augment_config(&self) -> AugmentConfig {
        AugmentConfig {
            p: self.augment.p,
            crop_scale: self.augment.crop_scale,
            flip_prob: self.augment.flip_prob,
            noise_std: self.augment.noise_std,
            view_size: self.augment.input_size,
            seed: self.seed,
        }
    }

    pub fn adam_config(&self) -> AdamConfig {
        AdamConfig {
            lr: self.train.lr,
            ..AdamConfig::default()
        }
    }

    pub fn loss_config(&self, fs: f64) -> LossConfig {
        LossConfig {
            alpha: self.train.alpha,
            beta: self.train.beta,
            epsilon: self.train.epsilon,
            snr_band: self.train.snr_band,
            fs,
            distill_target: self.train.distill_target,
        }
    }

    pub fn train_settings(&self, fs: f64) -> Result<TrainSettings> {
        Ok(TrainSettings {
            epochs: self.train.epochs,
            batch: self.train.batch,
            clip_s: self.train.clip_train_s,
            preprocess_size: self.augment.preprocess_size,
            augment: self.augment_config(),
            loss: self.loss_config(fs),
            schedule: EmaSchedule::new(self.train.rho_start, self.train.rho_end, self.train.epochs)?,
            seed: self.seed,
        })
    }
}
