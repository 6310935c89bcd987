use panoecg::dataset::{generate, panobench_synthetic, GeneratorConfig, MultiViewRecord};
use panoecg::dipole::{synth_with, DeviceProfile, DipoleTrajectory, TrajectoryConfig};
use panoecg::experiments::{anypairs_policy, deployment_policy, Protocol};
use panoecg::model::{GeoVtModel, ModelConfig};
use panoecg::nn::ParamGroup;
use panoecg::train::{stage2_devcal, stage3_ofcal, train_stage, Hooks, Stage, StageConfig, TrainError};
use panoecg::Seed;

fn small_model() -> GeoVtModel<f32> {
    let mut c = ModelConfig::with_channels(8);
    c.blocks = 1;
    c.embed_dim = 16;
    c.attn_dim = 16;
    GeoVtModel::new(c, Seed(9)).unwrap()
}

fn quick(stage: Stage, epochs: usize) -> StageConfig {
    let mut c = StageConfig::desk(stage);
    c.epochs = epochs;
    c.batch_size = 4;
    c.lr = 3e-3;
    c.milestones = vec![];
    c.crop = Some(128);
    c
}

fn records(n: usize, secs: f64) -> Vec<MultiViewRecord> {
    panobench_synthetic(4, n, 100.0, secs).unwrap()
}

fn group_values(m: &GeoVtModel<f32>, g: ParamGroup) -> Vec<Vec<f32>> {
    m.store.iter().filter(|(_, p)| p.group == g).map(|(_, p)| p.value.data().to_vec()).collect()
}

#[test]
fn stage_one_halves_the_loss_and_leaves_deviations_alone() {
    let recs = records(8, 3.0);
    let refs: Vec<&MultiViewRecord> = recs.iter().collect();
    let protocol = Protocol::desk();
    let mut cfg = quick(Stage::I, 12);
    cfg.samples_per_record = 2;
    let mut m = small_model();
    let report = train_stage(&mut m, &refs, &cfg, &anypairs_policy(&protocol, &cfg), &mut Hooks::default()).unwrap();
    assert!(report.final_loss() <= 0.5 * report.first_loss(), "{} -> {}", report.first_loss(), report.final_loss());
    assert!(m.deviations().iter().all(|&d| d == (0.0, 0.0)));

    let mut cfg2 = quick(Stage::II, 2);
    cfg2.samples_per_record = 1;
    stage2_devcal(&mut m, &refs, &cfg2, &deployment_policy(&protocol, &cfg2), &mut Hooks::default()).unwrap();
    assert!(m.deviations().iter().all(|&d| d == (0.0, 0.0)));
}

#[test]
fn seeded_runs_repeat_exactly() {
    let recs = records(3, 2.0);
    let refs: Vec<&MultiViewRecord> = recs.iter().collect();
    let cfg = quick(Stage::I, 2);
    let policy = anypairs_policy(&Protocol::desk(), &cfg);
    let run = || {
        let mut m = small_model();
        let r = train_stage(&mut m, &refs, &cfg, &policy, &mut Hooks::default()).unwrap();
        (r.epochs.iter().map(|e| e.loss.to_bits()).collect::<Vec<_>>(), m.store)
    };
    let (a, sa) = run();
    let (b, sb) = run();
    assert_eq!(a, b);
    assert_eq!(sa, sb);
}

#[test]
fn stage_two_refuses_mixed_devices() {
    let cfg = GeneratorConfig {
        n_subjects: 2,
        duration: 2.0,
        fs: 100.0,
        devices: vec![DeviceProfile::identity(), DeviceProfile::boxcar("box", 3, 1.0)],
        ..GeneratorConfig::default()
    };
    let recs = generate(&cfg).unwrap();
    let refs: Vec<&MultiViewRecord> = recs.iter().collect();
    let stage = quick(Stage::II, 1);
    let err = stage2_devcal(&mut small_model(), &refs, &stage, &deployment_policy(&Protocol::desk(), &stage), &mut Hooks::default())
        .unwrap_err();
    assert!(matches!(err, TrainError::MixedDevice(ref d) if d.len() == 2));
}

#[test]
fn stage_three_touches_only_embedding_and_deviations() {
    let rec = &records(1, 10.0)[0];
    let protocol = Protocol::desk();
    let mut cfg = quick(Stage::III, 6);
    cfg.lr = 1e-3;
    let base = small_model();
    let (m, session) = stage3_ofcal(&base, rec, &protocol.inputs, &cfg).unwrap();
    for g in [ParamGroup::ViewEncoder, ParamGroup::GeoVt, ParamGroup::Head] {
        assert_eq!(group_values(&m, g), group_values(&base, g), "{g:?} moved");
    }
    assert_ne!(group_values(&m, ParamGroup::AngleEmbedding), group_values(&base, ParamGroup::AngleEmbedding));
    assert!(session.deviations.iter().any(|d| d.dphi != 0.0 || d.dtheta != 0.0));
    assert_eq!(session.deviations.len(), protocol.inputs.len());
    assert_eq!(session.losses.len(), 6);
    assert_eq!(session.calibration, 0..500);
    assert_eq!(session.evaluation, 500..1000);
}

#[test]
fn stage_three_needs_ten_seconds() {
    let rec = &records(1, 9.0)[0];
    let err = stage3_ofcal(&small_model(), rec, &Protocol::desk().inputs, &quick(Stage::III, 1)).unwrap_err();
    assert!(matches!(err, TrainError::TooShort { needed, .. } if needed == 10.0));
}

fn trajectory(jitter: f64) -> DipoleTrajectory<f64> {
    let mut cfg = TrajectoryConfig::new(70.0, 2.0, 100.0);
    cfg.packet_jitter = jitter;
    synth_with(&cfg, Seed(12)).unwrap()
}

#[test]
fn packet_jitter_is_opt_in() {
    assert_eq!(trajectory(0.0), trajectory(0.0));
    assert_ne!(trajectory(0.0).samples, trajectory(0.3).samples);
    assert_eq!(trajectory(0.3), trajectory(0.3));
    let mut cfg = TrajectoryConfig::new(70.0, 2.0, 100.0);
    cfg.packet_jitter = -0.1;
    assert!(cfg.validate().is_err());
}
