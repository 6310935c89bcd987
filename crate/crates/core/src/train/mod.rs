//! Three-stage training: any-pairs pretraining, device calibration and
//! per-record on-the-fly calibration of angular deviations.

mod config;
mod log;

use std::ops::Range;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use config::{Stage, Stage3Scope, StageConfig};
pub use log::EpochLog;

use crate::dataset::{sample_pair_pools, sample_pair_with, LeadKind, MultiViewRecord, PairError, PairSample};
use crate::model::{GeoVtModel, ModelError, Views};
use crate::nn::{AdamW, AdamWConfig, Binder, GroupRule, GroupSet, MultiStepLr, ParamGroup, ParamId};
use crate::rng::Seed;
use crate::scalar::Scalar;
use crate::tensor::{Tensor, TensorError};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Pair(#[from] PairError),
    #[error("training set is empty")]
    Empty,
    #[error("record {subject} violates the pairing rule: {msg}")]
    LeadRule { subject: String, msg: String },
    #[error("stage II needs a single device, found {0:?}")]
    MixedDevice(Vec<String>),
    #[error("record is {found:.2} s long, calibration needs at least {needed:.2} s")]
    TooShort { found: f64, needed: f64 },
    #[error("{0}")]
    Config(String),
}

/// Mean absolute difference of two equally shaped tensors.
pub fn mae_loss<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<f64, TensorError> {
    if pred.shape() != target.shape() {
        return Err(TensorError::shape("mae_loss", pred.shape(), target.shape()));
    }
    let s: f64 = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(a, b)| (a.wide() - b.wide()).abs())
        .sum();
    Ok(s / pred.numel().max(1) as f64)
}

/// `x` plus seeded Gaussian noise of standard deviation `sigma`.
pub fn noise_perturb<T: Scalar>(x: &[T], sigma: f64, seed: Seed) -> Vec<T> {
    if sigma <= 0.0 {
        return x.to_vec();
    }
    let normal = Normal::new(0.0, sigma).expect("positive sigma");
    let mut rng = seed.rng();
    x.iter().map(|&v| v + T::lit(normal.sample(&mut rng))).collect()
}

fn std_dev<T: Scalar>(x: &[T]) -> f64 {
    let n = x.len().max(1) as f64;
    let mean = x.iter().map(|v| v.wide()).sum::<f64>() / n;
    (x.iter().map(|v| (v.wide() - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// How recorded and query sets are drawn for each training sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PairPolicy {
    /// Anchors plus random leads, set size drawn from `sizes`; queries from
    /// all remaining leads.
    AnyPairs { sizes: Vec<usize>, n_query: usize },
    /// `fixed` always recorded plus a count drawn from `extra` taken from
    /// `recorded_pool`; queries drawn from `query_pool`.
    Pools {
        fixed: Vec<usize>,
        recorded_pool: Vec<usize>,
        extra: Vec<usize>,
        query_pool: Vec<usize>,
        n_query: usize,
    },
}

impl PairPolicy {
    pub fn fixed(recorded: Vec<usize>, query_pool: Vec<usize>, n_query: usize) -> Self {
        PairPolicy::Pools {
            fixed: recorded,
            recorded_pool: Vec::new(),
            extra: vec![0],
            query_pool,
            n_query,
        }
    }

    pub fn draw<R: Rng>(&self, record: &MultiViewRecord, rng: &mut R) -> Result<PairSample, PairError> {
        match self {
            PairPolicy::AnyPairs { sizes, n_query } => {
                let k = *sizes.choose(rng).expect("non-empty sizes");
                sample_pair_with(record, k, *n_query, rng)
            }
            PairPolicy::Pools {
                fixed,
                recorded_pool,
                extra,
                query_pool,
                n_query,
            } => {
                let k = *extra.choose(rng).unwrap_or(&0);
                sample_pair_pools(fixed, recorded_pool, k, query_pool, *n_query, rng)
            }
        }
    }
}

/// Views of record leads, slotted by lead index so each lead owns one row
/// of the deviation table.
pub fn record_views(record: &MultiViewRecord, leads: &[usize]) -> Views {
    Views::new(
        leads.iter().map(|&i| record.leads[i].nominal_angle).collect(),
        leads.iter().map(|&i| Some(i)).collect(),
    )
}

/// Stacks lead samples `[start, end)` into `[leads, end - start]`.
pub fn stack_leads<T: Scalar>(record: &MultiViewRecord, leads: &[usize], range: Range<usize>) -> Tensor<T> {
    let data = leads
        .iter()
        .flat_map(|&i| record.leads[i].samples[range.clone()].iter().map(|&x| T::lit(x as f64)))
        .collect();
    Tensor::new(&[leads.len(), range.len()], data).expect("sized")
}

/// One supervised example.
#[derive(Debug, Clone)]
pub struct Sample<T> {
    pub x: Tensor<T>,
    pub recorded: Views,
    pub query: Views,
    pub target: Tensor<T>,
}

pub fn build_sample<T: Scalar>(
    record: &MultiViewRecord,
    pair: &PairSample,
    range: Range<usize>,
    noise_rel: f64,
    seed: Seed,
) -> Sample<T> {
    let mut x: Tensor<T> = stack_leads(record, &pair.recorded, range.clone());
    if noise_rel > 0.0 {
        let t = range.len();
        for (i, row) in x.data_mut().chunks_mut(t).enumerate() {
            let sigma = noise_rel * std_dev(row);
            let noisy = noise_perturb(row, sigma, seed.child(i as u64));
            row.copy_from_slice(&noisy);
        }
    }
    Sample {
        x,
        recorded: record_views(record, &pair.recorded),
        query: record_views(record, &pair.query),
        target: stack_leads(record, &pair.query, range),
    }
}

/// Mean loss and mean parameter gradients over a batch. Samples are
/// independent tapes; gradients are reduced in batch order.
pub fn batch_gradients<T: Scalar>(
    model: &GeoVtModel<T>,
    batch: &[Sample<T>],
    trainable: GroupSet,
) -> Result<(f64, Vec<(ParamId, Tensor<T>)>), TrainError> {
    let per: Vec<Result<(f64, Vec<(ParamId, Tensor<T>)>), TrainError>> = batch
        .par_iter()
        .map(|s| {
            let mut b = Binder::new(&model.store, trainable);
            let x = b.graph.constant(s.x.clone());
            let y = model.forward(&mut b, x, &s.recorded, &s.query)?;
            let t = b.graph.constant(s.target.clone());
            let loss = b.graph.mae(y, t)?;
            let value = b.graph.value(loss).data()[0].wide();
            let mut grads = b.graph.backward(loss)?;
            Ok((value, b.param_grads(&mut grads)))
        })
        .collect();
    let n = batch.len().max(1) as f64;
    let mut total = 0.0;
    let mut acc: Vec<(ParamId, Vec<f64>, Vec<usize>)> = Vec::new();
    for r in per {
        let (loss, grads) = r?;
        total += loss;
        for (id, g) in grads {
            let slot = match acc.iter().position(|(i, _, _)| *i == id) {
                Some(p) => p,
                None => {
                    acc.push((id, vec![0.0; g.numel()], g.shape().to_vec()));
                    acc.len() - 1
                }
            };
            for (a, v) in acc[slot].1.iter_mut().zip(g.data()) {
                *a += v.wide();
            }
        }
    }
    acc.sort_by_key(|(id, _, _)| id.index());
    let grads = acc
        .into_iter()
        .map(|(id, g, shape)| {
            let data = g.into_iter().map(|v| T::lit(v / n)).collect();
            (id, Tensor::new(&shape, data).expect("sized"))
        })
        .collect();
    Ok((total / n, grads))
}

/// Optional per-epoch evaluation and logging.
pub struct Hooks<'a, T> {
    pub on_epoch: Option<&'a mut dyn FnMut(&EpochLog)>,
    /// Returns `(psnr, ssim)` on a validation set.
    pub eval: Option<&'a (dyn Fn(&GeoVtModel<T>) -> (f64, f64) + Sync)>,
    pub eval_every: usize,
}

impl<T> Default for Hooks<'_, T> {
    fn default() -> Self {
        Hooks {
            on_epoch: None,
            eval: None,
            eval_every: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochLog>,
}

impl TrainReport {
    pub fn first_loss(&self) -> f64 {
        self.epochs.first().map_or(f64::NAN, |e| e.loss)
    }

    pub fn final_loss(&self) -> f64 {
        self.epochs.last().map_or(f64::NAN, |e| e.loss)
    }
}

fn crop_range<R: Rng>(n: usize, crop: Option<usize>, ds: usize, rng: &mut R) -> Result<Range<usize>, TrainError> {
    match crop {
        None => {
            let t = n / ds * ds;
            Ok(0..t)
        }
        Some(c) => {
            if c % ds != 0 || c == 0 {
                return Err(TrainError::Config(format!("crop {c} must be a positive multiple of {ds}")));
            }
            if c > n {
                return Err(TrainError::Config(format!("crop {c} longer than record ({n} samples)")));
            }
            let start = rng.random_range(0..=n - c);
            Ok(start..start + c)
        }
    }
}

/// Generic epoch loop shared by stages I and II.
pub fn train_stage<T: Scalar>(
    model: &mut GeoVtModel<T>,
    records: &[&MultiViewRecord],
    cfg: &StageConfig,
    policy: &PairPolicy,
    hooks: &mut Hooks<T>,
) -> Result<TrainReport, TrainError> {
    if records.is_empty() {
        return Err(TrainError::Empty);
    }
    let trainable = cfg.trainable();
    let schedule = MultiStepLr::new(cfg.lr, cfg.milestones.clone(), cfg.gamma);
    let mut opt = AdamW::new(AdamWConfig {
        weight_decay: cfg.weight_decay,
        ..Default::default()
    });
    let root = Seed(cfg.seed).named("train");
    let ds = model.config.downsample();
    let mut report = TrainReport { epochs: Vec::new() };
    for epoch in 0..cfg.epochs {
        let lr = schedule.lr(epoch);
        let eseed = root.child(epoch as u64);
        let mut order: Vec<usize> = (0..records.len())
            .flat_map(|i| std::iter::repeat_n(i, cfg.samples_per_record.max(1)))
            .collect();
        order.shuffle(&mut eseed.named("order").rng());
        let mut losses = Vec::new();
        for (bi, chunk) in order.chunks(cfg.batch_size.max(1)).enumerate() {
            let batch = chunk
                .iter()
                .enumerate()
                .map(|(j, &ri)| {
                    let sseed = eseed.child((bi * cfg.batch_size + j) as u64);
                    let mut rng = sseed.rng();
                    let rec = records[ri];
                    let pair = policy.draw(rec, &mut rng)?;
                    let range = crop_range(rec.n_samples(), cfg.crop, ds, &mut rng)?;
                    Ok(build_sample(rec, &pair, range, cfg.noise_rel, sseed.named("noise")))
                })
                .collect::<Result<Vec<Sample<T>>, TrainError>>()?;
            if trainable.contains(ParamGroup::Head) {
                model.refresh_spectral(1);
            }
            let (loss, grads) = batch_gradients(model, &batch, trainable)?;
            opt.step(&mut model.store, &grads, lr);
            losses.push(loss);
        }
        let mut entry = EpochLog {
            stage: format!("{:?}", cfg.stage),
            epoch,
            lr,
            loss: losses.iter().sum::<f64>() / losses.len().max(1) as f64,
            eval_psnr: None,
            eval_ssim: None,
        };
        if let Some(eval) = hooks.eval {
            if (epoch + 1) % hooks.eval_every.max(1) == 0 || epoch + 1 == cfg.epochs {
                let (p, s) = eval(model);
                entry.eval_psnr = Some(p);
                entry.eval_ssim = Some(s);
            }
        }
        if let Some(f) = hooks.on_epoch.as_mut() {
            f(&entry);
        }
        report.epochs.push(entry);
    }
    Ok(report)
}

/// Checks the any-pairs lead rule: anchors present, at least 4 leads.
pub fn check_lead_rule(records: &[&MultiViewRecord], max_recorded: usize) -> Result<(), TrainError> {
    for r in records {
        r.anchors().map_err(|e| TrainError::LeadRule {
            subject: r.subject_id.clone(),
            msg: e.to_string(),
        })?;
        if r.leads.len() < 4 || r.leads.len() <= max_recorded {
            return Err(TrainError::LeadRule {
                subject: r.subject_id.clone(),
                msg: format!("{} leads is too few for recorded sets of {max_recorded}", r.leads.len()),
            });
        }
    }
    Ok(())
}

/// Stage I: any-pairs pretraining with deviations frozen.
pub fn stage1_anypre<T: Scalar>(
    model: &mut GeoVtModel<T>,
    records: &[&MultiViewRecord],
    cfg: &StageConfig,
    hooks: &mut Hooks<T>,
) -> Result<TrainReport, TrainError> {
    let max = cfg.recorded_sizes.iter().copied().max().ok_or(TrainError::Config("no recorded sizes".into()))?;
    check_lead_rule(records, max)?;
    let policy = PairPolicy::AnyPairs {
        sizes: cfg.recorded_sizes.clone(),
        n_query: cfg.n_query,
    };
    train_stage(model, records, cfg, &policy, hooks)
}

/// Stage II: fine-tuning on a single device with a fixed lead policy.
pub fn stage2_devcal<T: Scalar>(
    model: &mut GeoVtModel<T>,
    records: &[&MultiViewRecord],
    cfg: &StageConfig,
    policy: &PairPolicy,
    hooks: &mut Hooks<T>,
) -> Result<TrainReport, TrainError> {
    let mut devices: Vec<String> = records.iter().map(|r| r.device.clone()).collect();
    devices.sort();
    devices.dedup();
    if devices.len() > 1 {
        return Err(TrainError::MixedDevice(devices));
    }
    train_stage(model, records, cfg, policy, hooks)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeadDeviation {
    pub lead: usize,
    pub label: String,
    pub dtheta: f64,
    pub dphi: f64,
}

/// Outcome of calibrating one record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSession {
    pub subject_id: String,
    pub recorded: Vec<usize>,
    pub calibration: Range<usize>,
    pub evaluation: Range<usize>,
    pub deviations: Vec<LeadDeviation>,
    pub losses: Vec<f64>,
}

/// Sample ranges `[0, cal)` and `[cal, 2·cal)` for a record.
pub fn calibration_windows(record: &MultiViewRecord, calibration_s: f64) -> Result<(Range<usize>, Range<usize>), TrainError> {
    let cal = (calibration_s * record.fs).round() as usize;
    let needed = 2.0 * calibration_s;
    if record.n_samples() < 2 * cal || cal == 0 {
        return Err(TrainError::TooShort {
            found: record.duration(),
            needed,
        });
    }
    Ok((0..cal, cal..2 * cal))
}

/// Stage III: fits per-lead deviations (and the angle embedding) on the
/// calibration window by predicting each held-out non-limb recorded lead
/// from the others. Returns the calibrated model.
pub fn stage3_ofcal<T: Scalar>(
    model: &GeoVtModel<T>,
    record: &MultiViewRecord,
    recorded: &[usize],
    cfg: &StageConfig,
) -> Result<(GeoVtModel<T>, CalibrationSession), TrainError> {
    let (cal, eval) = calibration_windows(record, cfg.calibration_s)?;
    let candidates: Vec<usize> = recorded
        .iter()
        .copied()
        .filter(|&i| record.leads[i].kind != LeadKind::Limb)
        .collect();
    if candidates.is_empty() || recorded.len() < 2 {
        return Err(TrainError::Config("calibration needs a non-limb recorded lead and one other".into()));
    }
    let mut m = model.clone();
    let trainable = cfg.trainable();
    let schedule = MultiStepLr::new(cfg.lr, cfg.milestones.clone(), cfg.gamma);
    let mut opt = AdamW::new(AdamWConfig {
        weight_decay: cfg.weight_decay,
        ..Default::default()
    })
    .with_rule(
        ParamGroup::Deviation,
        GroupRule {
            lr: Some(cfg.deviation_lr),
            weight_decay: 0.0,
        },
    );
    let ds = m.config.downsample();
    let root = Seed(cfg.seed).named("stage3");
    let mut losses = Vec::with_capacity(cfg.epochs);
    for it in 0..cfg.epochs {
        let seed = root.child(it as u64);
        let mut rng = seed.rng();
        let target = candidates[rng.random_range(0..candidates.len())];
        let inputs: Vec<usize> = recorded.iter().copied().filter(|&i| i != target).collect();
        let local = crop_range(cal.len(), cfg.crop, ds, &mut rng)?;
        let range = cal.start + local.start..cal.start + local.end;
        debug_assert!(range.end <= cal.end && range.end <= eval.start);
        let pair = PairSample {
            recorded: inputs,
            query: vec![target],
        };
        let sample = build_sample(record, &pair, range, cfg.noise_rel, seed.named("noise"));
        let (loss, grads) = batch_gradients(&m, std::slice::from_ref(&sample), trainable)?;
        opt.step(&mut m.store, &grads, schedule.lr(it));
        losses.push(loss);
    }
    let devs = m.deviations();
    let session = CalibrationSession {
        subject_id: record.subject_id.clone(),
        recorded: recorded.to_vec(),
        calibration: cal,
        evaluation: eval,
        deviations: recorded
            .iter()
            .map(|&i| LeadDeviation {
                lead: i,
                label: record.leads[i].label.clone(),
                dtheta: devs[i].0,
                dphi: devs[i].1,
            })
            .collect(),
        losses,
    };
    Ok((m, session))
}
