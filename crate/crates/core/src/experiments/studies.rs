use std::ops::Range;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::MultiViewRecord;
use crate::experiments::{eval_task, ExperimentError, Protocol};
use crate::metrics::{mean, MetricReport, Task};
use crate::model::{FilmMode, Fusion, GeoVtModel, ModelConfig};
use crate::rng::Seed;
use crate::train::{
    calibration_windows, stage3_ofcal, train_stage, Hooks, PairPolicy, Stage, StageConfig, TrainReport,
};

/// Model and schedule sizes for single-machine studies.
/// Fields missing from a JSON config keep their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DeskSetup {
    pub model: ModelConfig,
    pub stage1: StageConfig,
    pub stage2: StageConfig,
    pub stage3: StageConfig,
    /// Seed for model initialisation.
    pub seed: u64,
}

impl Default for DeskSetup {
    fn default() -> Self {
        let mut model = ModelConfig::with_channels(16);
        model.blocks = 2;
        model.embed_dim = 32;
        model.attn_dim = 32;
        model.n_freq = 2;
        // small batches: one core favours more, cheaper steps
        let mut stage1 = StageConfig::desk(Stage::I);
        stage1.lr = 2e-3;
        stage1.epochs = 15;
        stage1.batch_size = 4;
        stage1.samples_per_record = 4;
        stage1.milestones = vec![10];
        let mut stage2 = StageConfig::desk(Stage::II);
        stage2.epochs = 10;
        stage2.batch_size = 4;
        stage2.samples_per_record = 2;
        stage2.milestones = vec![7];
        DeskSetup {
            model,
            stage1,
            stage2,
            stage3: StageConfig::desk(Stage::III),
            seed: 1,
        }
    }
}

/// Anchors always recorded plus 1-3 more training views; targets from the
/// remaining training views.
pub fn anypairs_policy(protocol: &Protocol, cfg: &StageConfig) -> PairPolicy {
    let views = protocol.training_views();
    PairPolicy::Pools {
        fixed: protocol.inputs[..2].to_vec(),
        recorded_pool: views.clone(),
        extra: cfg.recorded_sizes.iter().map(|s| s.saturating_sub(2)).collect(),
        query_pool: views,
        n_query: cfg.n_query,
    }
}

/// Device-calibration pairs over the protocol's inputs: anchors always
/// recorded with all or all-but-one of the other inputs, targets from the
/// supervised views and the input left out. Covers the held-out pairs
/// per-record calibration trains on.
pub fn deployment_policy(protocol: &Protocol, cfg: &StageConfig) -> PairPolicy {
    let others = protocol.inputs[2..].to_vec();
    let n = others.len();
    let mut query_pool = protocol.supervised.clone();
    query_pool.extend(&others);
    PairPolicy::Pools {
        fixed: protocol.inputs[..2].to_vec(),
        recorded_pool: others,
        extra: if n > 1 { vec![n - 1, n] } else { vec![n] },
        query_pool,
        n_query: cfg.n_query,
    }
}

/// Protocol inputs recorded, targets from the supervised views.
pub fn fixed_policy(protocol: &Protocol, cfg: &StageConfig) -> PairPolicy {
    PairPolicy::fixed(protocol.inputs.clone(), protocol.supervised.clone(), cfg.n_query)
}

/// Trains a copy of `init`, or a fresh model when `None`.
pub fn train_with(
    model_cfg: &ModelConfig,
    seed: u64,
    init: Option<&GeoVtModel<f32>>,
    records: &[&MultiViewRecord],
    cfg: &StageConfig,
    policy: &PairPolicy,
) -> Result<(GeoVtModel<f32>, TrainReport), ExperimentError> {
    let mut model = match init {
        Some(m) => m.clone(),
        None => GeoVtModel::new(model_cfg.clone(), Seed(seed))?,
    };
    let report = train_stage(&mut model, records, cfg, policy, &mut Hooks::default())?;
    Ok((model, report))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub supervised: usize,
    pub reconstruction: MetricReport,
    pub synthesis: MetricReport,
}

/// Runs Stage I once per supervision count and scores
/// reconstruction and synthesis on `test`.
pub fn supervision_sweep(
    setup: &DeskSetup,
    train: &[&MultiViewRecord],
    test: &[&MultiViewRecord],
    base: &Protocol,
    counts: &[usize],
) -> Result<Vec<SweepPoint>, ExperimentError> {
    let angles: Vec<_> = train
        .first()
        .ok_or(ExperimentError::Empty)?
        .leads
        .iter()
        .map(|l| l.nominal_angle)
        .collect();
    counts
        .iter()
        .map(|&k| {
            let protocol = base.with_supervision(k, &angles)?;
            let policy = anypairs_policy(&protocol, &setup.stage1);
            let (model, _) = train_with(&setup.model, setup.seed, None, train, &setup.stage1, &policy)?;
            Ok(SweepPoint {
                supervised: k,
                reconstruction: eval_task(&model, test, &protocol, Task::Reconstruction, None, "sweep", setup.seed)?,
                synthesis: eval_task(&model, test, &protocol, Task::Synthesis, None, "sweep", setup.seed)?,
            })
        })
        .collect()
}

/// Component ablation rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AblationRow {
    /// Uniform fusion, no view-encoder modulation.
    A,
    /// Angle attention, no modulation.
    B,
    /// Full model.
    C,
    /// Full model trained without input noise.
    D,
}

impl AblationRow {
    pub const ALL: [AblationRow; 4] = [AblationRow::A, AblationRow::B, AblationRow::C, AblationRow::D];

    pub fn apply(self, model: &mut ModelConfig, stage: &mut StageConfig) {
        match self {
            AblationRow::A => {
                model.fusion = Fusion::Mean;
                model.film = FilmMode::Off;
            }
            AblationRow::B => model.film = FilmMode::Off,
            AblationRow::C => {}
            AblationRow::D => stage.noise_rel = 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationResult {
    pub row: AblationRow,
    pub synthesis: MetricReport,
}

/// Stage I any-pairs training per ablation row, scored on synthesis.
pub fn ablation(
    setup: &DeskSetup,
    train: &[&MultiViewRecord],
    test: &[&MultiViewRecord],
    protocol: &Protocol,
    rows: &[AblationRow],
) -> Result<Vec<AblationResult>, ExperimentError> {
    rows.iter()
        .map(|&row| {
            let mut mc = setup.model.clone();
            let mut sc = setup.stage1.clone();
            row.apply(&mut mc, &mut sc);
            let policy = anypairs_policy(protocol, &sc);
            let (model, _) = train_with(&mc, setup.seed, None, train, &sc, &policy)?;
            Ok(AblationResult {
                row,
                synthesis: eval_task(&model, test, protocol, Task::Synthesis, None, &format!("{row:?}"), setup.seed)?,
            })
        })
        .collect()
}

/// Copy of `record` whose lead `lead` is labelled `(dθ, dφ)` away from
/// where it was measured.
pub fn inject_offset(record: &MultiViewRecord, lead: usize, dtheta: f64, dphi: f64) -> MultiViewRecord {
    let mut r = record.clone();
    let l = &mut r.leads[lead];
    l.nominal_angle = l.nominal_angle.offset(dtheta, dphi);
    r
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviationPoint {
    pub offset: f64,
    /// Synthesis PSNR on the evaluation window before calibration.
    pub uncorrected: f64,
    /// Same after per-record calibration on the calibration window.
    pub corrected: f64,
    /// Mean fitted `dφ` of the injected lead.
    pub fitted_dphi: f64,
}

impl DeviationPoint {
    /// Share of the drop from `baseline` won back by calibration.
    pub fn recovery(&self, baseline: f64) -> f64 {
        let drop = baseline - self.uncorrected;
        if drop <= 0.0 {
            return 1.0;
        }
        (self.corrected - self.uncorrected) / drop
    }
}

/// Injects a `φ` offset on lead `lead` of every record and compares
/// synthesis before and after calibration.
pub fn deviation_study(
    model: &GeoVtModel<f32>,
    records: &[&MultiViewRecord],
    protocol: &Protocol,
    lead: usize,
    offsets: &[f64],
    cfg: &StageConfig,
) -> Result<Vec<DeviationPoint>, ExperimentError> {
    if !protocol.inputs.contains(&lead) {
        return Err(ExperimentError::Protocol(format!("lead {lead} is not a recorded input")));
    }
    offsets
        .iter()
        .map(|&offset| {
            let per: Vec<Result<(f64, f64, f64), ExperimentError>> = records
                .par_iter()
                .map(|r| {
                    let rec = inject_offset(r, lead, 0.0, offset);
                    let (_, eval): (Range<usize>, Range<usize>) = calibration_windows(&rec, cfg.calibration_s)?;
                    let one = [&rec];
                    let before = eval_task(model, &one, protocol, Task::Synthesis, Some(eval.clone()), "uncorrected", 0)?;
                    let (cal, session) = stage3_ofcal(model, &rec, &protocol.inputs, cfg)?;
                    let after = eval_task(&cal, &one, protocol, Task::Synthesis, Some(eval), "corrected", 0)?;
                    let dphi = session
                        .deviations
                        .iter()
                        .find(|d| d.lead == lead)
                        .map_or(0.0, |d| d.dphi);
                    Ok((before.mean_psnr, after.mean_psnr, dphi))
                })
                .collect();
            let per = per.into_iter().collect::<Result<Vec<_>, _>>()?;
            Ok(DeviationPoint {
                offset,
                uncorrected: mean(&per.iter().map(|p| p.0).collect::<Vec<_>>()),
                corrected: mean(&per.iter().map(|p| p.1).collect::<Vec<_>>()),
                fitted_dphi: mean(&per.iter().map(|p| p.2).collect::<Vec<_>>()),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyPoint {
    pub fraction: f64,
    pub n_records: usize,
    pub pretrained: f64,
    pub scratch: f64,
}

impl EfficiencyPoint {
    pub fn gap(&self) -> f64 {
        self.pretrained - self.scratch
    }
}

/// Stage II on growing fractions of `train`, from `pretrained` and from a
/// fresh initialisation, scored on synthesis over `test`.
pub fn data_efficiency_sweep(
    setup: &DeskSetup,
    pretrained: &GeoVtModel<f32>,
    train: &[&MultiViewRecord],
    test: &[&MultiViewRecord],
    protocol: &Protocol,
    fractions: &[f64],
) -> Result<Vec<EfficiencyPoint>, ExperimentError> {
    let policy = fixed_policy(protocol, &setup.stage2);
    fractions
        .iter()
        .map(|&fraction| {
            if !(fraction > 0.0 && fraction <= 1.0) {
                return Err(ExperimentError::Protocol(format!("fraction {fraction} outside (0, 1]")));
            }
            let n = ((train.len() as f64 * fraction).round() as usize).clamp(1, train.len());
            let subset = &train[..n];
            let (pre, _) = train_with(&setup.model, setup.seed, Some(pretrained), subset, &setup.stage2, &policy)?;
            let (scr, _) = train_with(&setup.model, setup.seed, None, subset, &setup.stage2, &policy)?;
            Ok(EfficiencyPoint {
                fraction,
                n_records: n,
                pretrained: eval_task(&pre, test, protocol, Task::Synthesis, None, "pretrained", setup.seed)?.mean_psnr,
                scratch: eval_task(&scr, test, protocol, Task::Synthesis, None, "scratch", setup.seed)?.mean_psnr,
            })
        })
        .collect()
}
