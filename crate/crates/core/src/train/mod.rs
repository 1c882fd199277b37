//! The finetuning training recipe: feature-reconstruction loss, frozen
//! target encoder with optional EMA teacher updates, AdamW with blockwise
//! learning-rate decay and warmup schedules, gradient clipping, the
//! two-stage high-resolution adaptation, and collapse detection.

mod config;
mod engine;
mod optim;
mod schedule;

pub use config::{parse_config, render_config, Schedule, TrainConfig};
pub use engine::{
    detect_collapse, ema_update, feature_dispersion, reconstruction_loss, sample_loss,
    sample_loss_and_grads, train, CollapseDetector, StepRecord, TrainOutcome,
};
pub use optim::{adamw_step, clip_grad_norm, AdamState};
pub use schedule::{assign_blockwise_lrs, lr_at_step, stage_lr, ParamGroup, StageSchedule};

use crate::model::ModelError;

pub type Result<T> = std::result::Result<T, TrainError>;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },
    #[error("non-finite gradient encountered")]
    NonFiniteGradient,
    #[error("parameter sets do not match at {name}")]
    MismatchedParams { name: String },
    #[error("step {step} out of range 0..={total}")]
    StepOutOfRange { step: usize, total: usize },
    #[error("{what}: {lhs} vs {rhs}")]
    LengthMismatch { what: &'static str, lhs: usize, rhs: usize },
    #[error("config: {0}")]
    Config(String),
}
