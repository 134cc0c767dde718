//! Iterative registration pipeline: the refinement loop, the discounted
//! training loss, the optimizer, and the evaluation harness.

mod adam;
mod eval;
mod loss;
mod register;
mod train;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use eval::{evaluate, Algorithm, EvaluationRow};
pub use loss::{cycle_loss, feature_align_loss, rigid_motion_loss};
pub use register::{
    prnet_register, LossWeights, PrnetOptions, PrnetRun, StepBookkeeping, StepLossValues,
};
pub use train::{holdout_metrics, holdout_pairs, train, EpochRecord, TrainConfig, TrainOutcome};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("loss became non-finite")]
    NonFiniteLoss,
    #[error(transparent)]
    Geometry(#[from] crate::geometry::GeometryError),
    #[error(transparent)]
    Matcher(#[from] crate::matcher::MatcherError),
    #[error(transparent)]
    Network(#[from] crate::networks::NetworkError),
    #[error(transparent)]
    Autodiff(#[from] crate::autodiff::AutodiffError),
    #[error(transparent)]
    Icp(#[from] crate::icp::IcpError),
    #[error(transparent)]
    Procrustes(#[from] crate::procrustes::ProcrustesError),
    #[error(transparent)]
    Checkpoint(#[from] crate::checkpoint::CheckpointError),
}
