use serde::{Deserialize, Serialize};

use crate::dipole::ViewAngle;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LeadKind {
    Limb,
    Chest,
    Virtual,
}

/// Limb leads that every training recorded set must contain.
pub const ANCHOR_LEADS: [&str; 2] = ["I", "II"];

#[derive(Debug, Clone, PartialEq)]
pub struct Lead {
    pub label: String,
    pub kind: LeadKind,
    /// Angle the electrode is supposed to sit at; what the model is told.
    pub nominal_angle: ViewAngle,
    /// Angle the signal was actually measured from.
    pub true_angle: ViewAngle,
    pub samples: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiViewRecord {
    pub subject_id: String,
    pub fs: f64,
    /// Device the record was acquired with (a profile name).
    pub device: String,
    pub leads: Vec<Lead>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RecordError {
    #[error("record has no leads")]
    Empty,
    #[error("lead {label} has {found} samples, expected {expected}")]
    Ragged { label: String, expected: usize, found: usize },
    #[error("lead {0} has an out-of-range angle")]
    Angle(String),
    #[error("duplicate lead label {0}")]
    Duplicate(String),
    #[error("sampling rate must be positive")]
    Rate,
    #[error("record {subject} lacks anchor lead {label}")]
    MissingAnchor { subject: String, label: String },
}

impl MultiViewRecord {
    pub fn n_samples(&self) -> usize {
        self.leads.first().map_or(0, |l| l.samples.len())
    }

    pub fn duration(&self) -> f64 {
        self.n_samples() as f64 / self.fs
    }

    pub fn lead_index(&self, label: &str) -> Option<usize> {
        self.leads.iter().position(|l| l.label == label)
    }

    pub fn validate(&self) -> Result<(), RecordError> {
        if !(self.fs > 0.0) {
            return Err(RecordError::Rate);
        }
        let n = self.leads.first().ok_or(RecordError::Empty)?.samples.len();
        let mut seen = std::collections::HashSet::new();
        for l in &self.leads {
            if l.samples.len() != n {
                return Err(RecordError::Ragged {
                    label: l.label.clone(),
                    expected: n,
                    found: l.samples.len(),
                });
            }
            if !l.nominal_angle.is_valid() || !l.true_angle.is_valid() {
                return Err(RecordError::Angle(l.label.clone()));
            }
            if !seen.insert(l.label.as_str()) {
                return Err(RecordError::Duplicate(l.label.clone()));
            }
        }
        Ok(())
    }

    /// Indices of the anchor limb leads, required for training use.
    pub fn anchors(&self) -> Result<[usize; 2], RecordError> {
        let find = |label: &str| {
            self.leads
                .iter()
                .position(|l| l.label == label && l.kind == LeadKind::Limb)
                .ok_or_else(|| RecordError::MissingAnchor {
                    subject: self.subject_id.clone(),
                    label: label.into(),
                })
        };
        Ok([find(ANCHOR_LEADS[0])?, find(ANCHOR_LEADS[1])?])
    }

    /// Copy restricted to samples `[start, end)`.
    pub fn window(&self, start: usize, end: usize) -> MultiViewRecord {
        let mut out = self.clone();
        for l in &mut out.leads {
            l.samples = l.samples[start..end].to_vec();
        }
        out
    }

    /// Copy keeping only the leads at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> MultiViewRecord {
        MultiViewRecord {
            subject_id: self.subject_id.clone(),
            fs: self.fs,
            device: self.device.clone(),
            leads: indices.iter().map(|&i| self.leads[i].clone()).collect(),
        }
    }
}
