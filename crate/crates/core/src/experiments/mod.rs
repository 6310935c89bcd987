//! Evaluation protocols and the desk-scale studies built on them.

mod eval;
mod protocol;
mod studies;

pub use eval::{eval_task, DipoleOracle, ViewSynthesizer};
pub use protocol::{chest, Protocol, CHEST_OFFSET};
pub use studies::{
    ablation, anypairs_policy, data_efficiency_sweep, deployment_policy, deviation_study, fixed_policy, inject_offset, supervision_sweep,
    train_with, AblationResult, AblationRow, DeskSetup, DeviationPoint, EfficiencyPoint, SweepPoint,
};

use crate::dipole::DipoleError;
use crate::metrics::MetricError;
use crate::model::ModelError;
use crate::tensor::TensorError;
use crate::train::TrainError;

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("no records to evaluate")]
    Empty,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Dipole(#[from] DipoleError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}
