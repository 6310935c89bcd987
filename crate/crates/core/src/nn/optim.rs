//! AdamW with decoupled weight decay and a multi-step learning-rate schedule.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::nn::param::{ParamGroup, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Step decay: `base · gamma^(number of milestones ≤ epoch)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiStepLr {
    pub base: f64,
    pub milestones: Vec<usize>,
    pub gamma: f64,
}

impl MultiStepLr {
    pub fn new(base: f64, milestones: Vec<usize>, gamma: f64) -> Self {
        MultiStepLr {
            base,
            milestones,
            gamma,
        }
    }

    pub fn lr(&self, epoch: usize) -> f64 {
        let passed = self.milestones.iter().filter(|&&m| m <= epoch).count();
        self.base * self.gamma.powi(passed as i32)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-2,
        }
    }
}

/// Per-group override of the learning rate and weight decay.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupRule {
    /// Fixed learning rate for the group; `None` follows the schedule.
    pub lr: Option<f64>,
    pub weight_decay: f64,
}

/// Optimiser state: per-parameter first and second moments and a step count.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub config: AdamWConfig,
    step: u64,
    moments: HashMap<usize, (Vec<f64>, Vec<f64>)>,
    rules: HashMap<ParamGroup, GroupRule>,
}

impl AdamW {
    pub fn new(config: AdamWConfig) -> Self {
        AdamW {
            config,
            step: 0,
            moments: HashMap::new(),
            rules: HashMap::new(),
        }
    }

    pub fn with_rule(mut self, group: ParamGroup, rule: GroupRule) -> Self {
        self.rules.insert(group, rule);
        self
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Moment buffers for a parameter, if it has been updated.
    pub fn moments(&self, id: ParamId) -> Option<(&[f64], &[f64])> {
        self.moments
            .get(&id.index())
            .map(|(m, v)| (m.as_slice(), v.as_slice()))
    }

    /// Applies one update with learning rate `lr` to every parameter that
    /// has a gradient.
    pub fn step<T: Scalar>(&mut self, store: &mut ParamStore<T>, grads: &[(ParamId, Tensor<T>)], lr: f64) {
        self.step += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        for (id, grad) in grads {
            let group = store.get(*id).group;
            let (lr, wd) = match self.rules.get(&group) {
                Some(rule) => (rule.lr.unwrap_or(lr), rule.weight_decay),
                None => (lr, c.weight_decay),
            };
            let value = store.value_mut(*id);
            assert_eq!(value.shape(), grad.shape(), "gradient shape mismatch");
            let n = value.numel();
            let (m, v) = self
                .moments
                .entry(id.index())
                .or_insert_with(|| (vec![0.0; n], vec![0.0; n]));
            for ((p, g), (mi, vi)) in value
                .data_mut()
                .iter_mut()
                .zip(grad.data())
                .zip(m.iter_mut().zip(v.iter_mut()))
            {
                let g = g.wide();
                let mut x = p.wide();
                x -= lr * wd * x;
                *mi = c.beta1 * *mi + (1.0 - c.beta1) * g;
                *vi = c.beta2 * *vi + (1.0 - c.beta2) * g * g;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                x -= lr * mhat / (vhat.sqrt() + c.eps);
                *p = T::lit(x);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn multistep_schedule() {
        let s = MultiStepLr::new(1e-3, vec![50, 100, 150], 0.5);
        assert_eq!(s.lr(0), 1e-3);
        assert_eq!(s.lr(49), 1e-3);
        assert!((s.lr(50) - 5e-4).abs() < 1e-18);
        assert!((s.lr(60) - 5e-4).abs() < 1e-18);
        assert!((s.lr(160) - 1.25e-4).abs() < 1e-18);
    }

    #[test]
    fn descends_on_a_parabola() {
        let mut store = ParamStore::<f64>::new();
        let x = store.add("x", ParamGroup::Head, Tensor::scalar(3.0));
        let mut opt = AdamW::new(AdamWConfig {
            weight_decay: 0.0,
            ..Default::default()
        });
        let grad = Tensor::scalar(2.0 * 3.0);
        opt.step(&mut store, &[(x, grad)], 0.1);
        assert!(store.value(x).data()[0] < 3.0);
        let (m, v) = opt.moments(x).unwrap();
        assert_eq!((m.len(), v.len()), (1, 1));
    }

    #[test]
    fn weight_decay_is_decoupled() {
        // zero gradient: only decay acts, p <- p (1 - lr wd)
        let mut store = ParamStore::<f64>::new();
        let x = store.add("x", ParamGroup::Head, Tensor::scalar(2.0));
        let mut opt = AdamW::new(AdamWConfig::default());
        opt.step(&mut store, &[(x, Tensor::scalar(0.0))], 0.1);
        assert!((store.value(x).data()[0] - 2.0 * (1.0 - 0.1 * 1e-2)).abs() < 1e-12);
    }

    #[test]
    fn group_rule_overrides_lr_and_decay() {
        let mut store = ParamStore::<f64>::new();
        let d = store.add("d", ParamGroup::Deviation, Tensor::scalar(0.0));
        let mut opt = AdamW::new(AdamWConfig::default()).with_rule(
            ParamGroup::Deviation,
            GroupRule {
                lr: Some(0.5),
                weight_decay: 0.0,
            },
        );
        opt.step(&mut store, &[(d, Tensor::scalar(1.0))], 1e-5);
        // first Adam step moves by lr regardless of gradient scale
        assert!((store.value(d).data()[0] + 0.5).abs() < 1e-6);
    }
}
