use serde::{Deserialize, Serialize};

use crate::dataset::{LIMB_LEADS, N_VIEWS};
use crate::dipole::ViewAngle;
use crate::experiments::ExperimentError;
use crate::metrics::Task;

/// Lead roles for one benchmark configuration, as record lead indices:
/// `inputs` are recorded at evaluation, `supervised` may be used as
/// training targets, `synthesis` is never seen during training.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Protocol {
    pub inputs: Vec<usize>,
    pub supervised: Vec<usize>,
    pub synthesis: Vec<usize>,
}

/// Offset of the first precordial view in record order.
pub const CHEST_OFFSET: usize = LIMB_LEADS.len();

/// Record index of precordial view `n` (1-based).
pub fn chest(n: usize) -> usize {
    CHEST_OFFSET + n - 1
}

impl Protocol {
    /// Desk benchmark: limb leads I, II plus views 12 and 24 as inputs,
    /// every third view from 2 held out for synthesis, all other views
    /// supervised.
    pub fn desk() -> Self {
        let inputs = vec![0, 1, chest(12), chest(24)];
        let synthesis: Vec<usize> = (0..12).map(|i| chest(2 + 3 * i)).collect();
        let supervised = (0..N_VIEWS)
            .filter(|i| !inputs.contains(i) && !synthesis.contains(i))
            .collect();
        Protocol {
            inputs,
            supervised,
            synthesis,
        }
    }

    /// Views a task is scored on.
    pub fn views(&self, task: Task) -> &[usize] {
        match task {
            Task::Reconstruction => &self.supervised,
            Task::Synthesis => &self.synthesis,
        }
    }

    /// Everything a training run may touch, inputs included.
    pub fn training_views(&self) -> Vec<usize> {
        let mut v = self.inputs.clone();
        v.extend(self.supervised.iter().filter(|i| !self.inputs.contains(i)));
        v
    }

    pub fn validate(&self, n_leads: usize) -> Result<(), ExperimentError> {
        let all = self.inputs.iter().chain(&self.supervised).chain(&self.synthesis);
        if let Some(i) = all.clone().find(|&&i| i >= n_leads) {
            return Err(ExperimentError::Protocol(format!("lead {i} out of range ({n_leads} leads)")));
        }
        if let Some(i) = self
            .synthesis
            .iter()
            .find(|i| self.supervised.contains(i) || self.inputs.contains(i))
        {
            return Err(ExperimentError::Protocol(format!(
                "synthesis view {i} is also used for training"
            )));
        }
        if self.inputs.len() < 3 {
            return Err(ExperimentError::Protocol("at least 3 recorded inputs are required".into()));
        }
        Ok(())
    }

    /// Keeps `k` supervised views, picked greedily to be far from the
    /// inputs and from each other so that every prefix spreads out.
    pub fn with_supervision(&self, k: usize, angles: &[ViewAngle]) -> Result<Protocol, ExperimentError> {
        let pool: Vec<usize> = self
            .supervised
            .iter()
            .copied()
            .filter(|i| !self.inputs.contains(i))
            .collect();
        if k > pool.len() {
            return Err(ExperimentError::Protocol(format!(
                "{k} supervised views requested, {} available",
                pool.len()
            )));
        }
        let mut chosen: Vec<usize> = Vec::with_capacity(k);
        let mut taken = self.inputs.clone();
        while chosen.len() < k {
            let best = pool
                .iter()
                .copied()
                .filter(|i| !chosen.contains(i))
                .map(|i| {
                    let d = taken
                        .iter()
                        .map(|&j| angles[i].separation(&angles[j]))
                        .fold(f64::INFINITY, f64::min);
                    (i, d)
                })
                // ties resolve to the lower index
                .fold(None, |acc: Option<(usize, f64)>, (i, d)| match acc {
                    Some((_, bd)) if bd >= d => acc,
                    _ => Some((i, d)),
                })
                .expect("pool not exhausted")
                .0;
            chosen.push(best);
            taken.push(best);
        }
        Ok(Protocol {
            inputs: self.inputs.clone(),
            supervised: chosen,
            synthesis: self.synthesis.clone(),
        })
    }
}
