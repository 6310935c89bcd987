//! Parameters, optimisation, spectral normalisation and checkpoints.

pub mod checkpoint;
pub mod optim;
pub mod param;
pub mod spectral;

pub use checkpoint::{read_checkpoint, write_checkpoint, CheckpointError};
pub use optim::{AdamW, AdamWConfig, GroupRule, MultiStepLr};
pub use param::{Binder, GroupSet, Param, ParamGroup, ParamId, ParamStore};
