use serde::{Deserialize, Serialize};

use crate::nn::{GroupSet, ParamGroup};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    /// Any-pairs pretraining.
    I,
    /// Device calibration.
    II,
    /// Per-record on-the-fly calibration of angular deviations.
    III,
}

/// Which parameters Stage III may touch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage3Scope {
    /// Angle embedding and deviations only; encoder, attention and head frozen.
    Embedding,
    /// Everything except the view encoder and the reconstruction head.
    AllButEncoderAndHead,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageConfig {
    pub stage: Stage,
    pub lr: f64,
    /// Epochs for stages I and II, optimiser iterations for stage III.
    pub epochs: usize,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub milestones: Vec<usize>,
    pub gamma: f64,
    /// Input noise as a fraction of each recorded lead's std; 0 disables.
    pub noise_rel: f64,
    /// Training crop length in samples; `None` uses whole records.
    pub crop: Option<usize>,
    /// Recorded-set sizes drawn in any-pairs training.
    pub recorded_sizes: Vec<usize>,
    /// Query leads per training sample.
    pub n_query: usize,
    /// Training samples drawn per record per epoch.
    pub samples_per_record: usize,
    /// Learning rate of the deviation table (degrees per step scale).
    pub deviation_lr: f64,
    pub stage3_scope: Stage3Scope,
    /// Stage III calibration window; evaluation uses the rest of the record.
    pub calibration_s: f64,
    pub seed: u64,
}

impl StageConfig {
    /// Published hyperparameters.
    pub fn published(stage: Stage) -> Self {
        let (lr, epochs) = match stage {
            Stage::I => (1e-3, 200),
            Stage::II => (5e-4, 200),
            Stage::III => (5e-5, 100),
        };
        StageConfig {
            stage,
            lr,
            epochs,
            batch_size: 32,
            weight_decay: 1e-2,
            milestones: vec![50, 100, 150],
            gamma: 0.5,
            noise_rel: 0.02,
            crop: None,
            recorded_sizes: vec![3, 4, 5],
            n_query: 8,
            samples_per_record: 1,
            deviation_lr: 0.5,
            stage3_scope: Stage3Scope::Embedding,
            calibration_s: 5.0,
            seed: 0,
        }
    }

    /// Single-machine settings: 50 stage-I epochs on 1 s crops with the
    /// schedule compressed to the shorter run.
    pub fn desk(stage: Stage) -> Self {
        let mut c = StageConfig::published(stage);
        if stage != Stage::III {
            c.epochs = 50;
            c.crop = Some(256);
        }
        c.milestones = c.milestones.iter().map(|m| m * c.epochs / 200).collect();
        if stage == Stage::III {
            c.milestones = vec![50, 100, 150];
        }
        c
    }

    /// Parameter groups with gradients in this stage.
    pub fn trainable(&self) -> GroupSet {
        use ParamGroup::*;
        match (self.stage, self.stage3_scope) {
            (Stage::I | Stage::II, _) => GroupSet::of(&[AngleEmbedding, ViewEncoder, GeoVt, Head]),
            (Stage::III, Stage3Scope::Embedding) => GroupSet::of(&[AngleEmbedding, Deviation]),
            (Stage::III, Stage3Scope::AllButEncoderAndHead) => GroupSet::of(&[AngleEmbedding, Deviation, GeoVt]),
        }
    }
}
