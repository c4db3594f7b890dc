use serde::{Deserialize, Serialize};

use crate::error::{Result, SspdError};
use crate::model::ParamStore;

/// Cosine-annealed momentum from `rho_start` at epoch 0 to `rho_end` at the last epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmaSchedule {
    pub rho_start: f64,
    pub rho_end: f64,
    pub total_epochs: usize,
}

impl EmaSchedule {
    pub fn new(rho_start: f64, rho_end: f64, total_epochs: usize) -> Result<Self> {
        if !(0.0..=1.0).contains(&rho_start) || !(0.0..=1.0).contains(&rho_end) || rho_start > rho_end {
            return Err(SspdError::Config(format!(
                "momentum schedule needs 0 <= rho_start <= rho_end <= 1, got {rho_start} -> {rho_end}"
            )));
        }
        if total_epochs == 0 {
            return Err(SspdError::Config("momentum schedule needs at least one epoch".into()));
        }
        Ok(Self { rho_start, rho_end, total_epochs })
    }

    pub fn rho(&self, epoch: usize) -> Result<f64> {
        momentum_schedule(epoch, self)
    }
}

pub fn momentum_schedule(epoch: usize, sched: &EmaSchedule) -> Result<f64> {
    if epoch > sched.total_epochs {
        return Err(SspdError::Config(format!(
            "epoch {epoch} outside the schedule of {} epochs",
            sched.total_epochs
        )));
    }
    let phase = std::f64::consts::PI * epoch as f64 / sched.total_epochs as f64;
    Ok(sched.rho_end - (sched.rho_end - sched.rho_start) * (1.0 + phase.cos()) / 2.0)
}

/// `target <- rho * target + (1 - rho) * online`, parameter by parameter.
pub fn ema_update(target: &ParamStore, online: &ParamStore, rho: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(SspdError::Config(format!("momentum {rho} not in [0, 1]")));
    }
    for (name, t) in target.iter() {
        let o = online.var(name)?;
        if o.shape() != t.shape() {
            return Err(SspdError::Shape(format!("parameter {name}: {:?} vs {:?}", t.shape(), o.shape())));
        }
        let next = ((t.as_tensor() * rho)? + (o.as_tensor() * (1.0 - rho))?)?.detach();
        t.set(&next)?;
    }
    Ok(())
}
