//! Hierarchical self-distillation: an online network learns to reproduce the
//! similarity pyramid and signal of an EMA target network that sees a cleaner
//! view of the same clip, under two periodicity regularizers.

pub mod adam;
pub mod ema;
pub mod losses;
pub mod train;

pub use adam::{Adam, AdamConfig};
pub use ema::{ema_update, momentum_schedule, EmaSchedule};
pub use losses::{
    inverse_snr, rpd_loss, sd_regularization, snr_regularization, token_mse_loss, total_loss, tspd_loss,
    DistillTarget, LossBreakdown,
};
pub use train::{fit, objective, prepare_batch, train_step, LossConfig, ModelState, Objective, StepLog, TrainSettings};
