//! Synthetic multi-view benchmark built on the 48-view electrode layout.

use rand::Rng;

use crate::dataset::record::{Lead, LeadKind, MultiViewRecord};
use crate::dataset::GeneratorConfig;
use crate::dipole::{
    apply_device, project_lead_far, synth_with, DeviceProfile, DipoleError, PlacementJitter, TrajectoryConfig,
    ViewAngle,
};
use crate::rng::Seed;

/// Limb leads with their mean annotated angles.
pub const LIMB_LEADS: [(&str, ViewAngle); 6] = [
    ("I", ViewAngle::deg(90.0, 90.0)),
    ("II", ViewAngle::deg(150.0, 90.0)),
    ("III", ViewAngle::deg(150.0, -90.0)),
    ("aVR", ViewAngle::deg(60.0, -90.0)),
    ("aVL", ViewAngle::deg(60.0, 90.0)),
    ("aVF", ViewAngle::deg(180.0, 90.0)),
];

/// Precordial views 1..=42 with their mean annotated angles.
pub const CHEST_VIEWS: [ViewAngle; 42] = [
    ViewAngle::deg(106.0, -102.0),
    ViewAngle::deg(121.0, -101.0),
    ViewAngle::deg(132.0, -99.0),
    ViewAngle::deg(52.0, -83.0),
    ViewAngle::deg(68.0, -78.0),
    ViewAngle::deg(90.0, -74.0),
    ViewAngle::deg(109.0, -75.0),
    ViewAngle::deg(125.0, -77.0),
    ViewAngle::deg(137.0, -81.0),
    ViewAngle::deg(43.0, -74.0),
    ViewAngle::deg(63.0, -61.0),
    ViewAngle::deg(90.0, -54.0),
    ViewAngle::deg(113.0, -55.0),
    ViewAngle::deg(131.0, -62.0),
    ViewAngle::deg(144.0, -70.0),
    ViewAngle::deg(30.0, -73.0),
    ViewAngle::deg(54.0, -51.0),
    ViewAngle::deg(90.0, -33.0),
    ViewAngle::deg(118.0, -40.0),
    ViewAngle::deg(137.0, -54.0),
    ViewAngle::deg(149.0, -64.0),
    ViewAngle::deg(20.0, 70.0),
    ViewAngle::deg(48.0, 42.0),
    ViewAngle::deg(90.0, 11.0),
    ViewAngle::deg(122.0, 32.0),
    ViewAngle::deg(141.0, 51.0),
    ViewAngle::deg(153.0, 63.0),
    ViewAngle::deg(30.0, 69.0),
    ViewAngle::deg(54.0, 48.0),
    ViewAngle::deg(90.0, 32.0),
    ViewAngle::deg(119.0, 41.0),
    ViewAngle::deg(139.0, 55.0),
    ViewAngle::deg(152.0, 67.0),
    ViewAngle::deg(40.0, 80.0),
    ViewAngle::deg(60.0, 71.0),
    ViewAngle::deg(90.0, 65.0),
    ViewAngle::deg(117.0, 66.0),
    ViewAngle::deg(135.0, 69.0),
    ViewAngle::deg(147.0, 77.0),
    ViewAngle::deg(112.0, 105.0),
    ViewAngle::deg(129.0, 103.0),
    ViewAngle::deg(140.0, 100.0),
];

pub const N_VIEWS: usize = LIMB_LEADS.len() + CHEST_VIEWS.len();

/// Label of precordial view `n` (1-based).
pub fn chest_label(n: usize) -> String {
    format!("V{n}")
}

/// Nominal layout in record order: six limb leads then views 1..=42.
pub fn layout() -> Vec<(String, LeadKind, ViewAngle)> {
    LIMB_LEADS
        .iter()
        .map(|(l, a)| (l.to_string(), LeadKind::Limb, *a))
        .chain(
            CHEST_VIEWS
                .iter()
                .enumerate()
                .map(|(i, a)| (chest_label(i + 1), LeadKind::Chest, *a)),
        )
        .collect()
}

/// One subject: a dipole trajectory projected onto every view at its
/// jittered true angle, passed through `device`.
pub fn synth_subject(
    cfg: &GeneratorConfig,
    device: &DeviceProfile,
    index: usize,
    seed: Seed,
) -> Result<MultiViewRecord, DipoleError> {
    let mut rng = seed.named("heart-rate").rng();
    let (lo, hi) = cfg.heart_rate;
    let hr = if hi > lo { rng.random_range(lo..=hi) } else { lo };
    let mut tcfg = TrajectoryConfig::new(hr, cfg.duration, cfg.fs);
    tcfg.rotation_std_deg = cfg.rotation_std_deg;
    tcfg.packet_jitter = cfg.packet_jitter;
    let traj = synth_with::<f64>(&tcfg, seed.named("trajectory"))?;
    let lay = layout();
    let jitter = PlacementJitter::sample(seed.named("jitter"), lay.len(), cfg.jitter_std_deg);
    let leads = lay
        .into_iter()
        .zip(&jitter.offsets)
        .enumerate()
        .map(|(i, ((label, kind, nominal), &(dt, dp)))| {
            let true_angle = if dt == 0.0 && dp == 0.0 { nominal } else { nominal.offset(dt, dp) };
            let clean = project_lead_far(&traj, true_angle);
            let signal = apply_device(&clean, device, cfg.fs, seed.named("device").child(i as u64))?;
            Ok(Lead {
                label,
                kind,
                nominal_angle: nominal,
                true_angle,
                samples: signal.iter().map(|&x| x as f32).collect(),
            })
        })
        .collect::<Result<Vec<_>, DipoleError>>()?;
    Ok(MultiViewRecord {
        subject_id: format!("subject-{index:04}"),
        fs: cfg.fs,
        device: device.name.clone(),
        leads,
    })
}

/// Generates `cfg.n_subjects` records; subject `i` uses device `i mod len`.
pub fn generate(cfg: &GeneratorConfig) -> Result<Vec<MultiViewRecord>, DipoleError> {
    cfg.validate()?;
    let root = Seed(cfg.seed);
    (0..cfg.n_subjects)
        .map(|i| {
            let device = &cfg.devices[i % cfg.devices.len()];
            synth_subject(cfg, device, i, root.child(i as u64))
        })
        .collect()
}

/// Noise-free default benchmark: 250 Hz, identity device, no jitter.
pub fn panobench_synthetic(
    seed: u64,
    n_subjects: usize,
    fs: f64,
    duration: f64,
) -> Result<Vec<MultiViewRecord>, DipoleError> {
    generate(&GeneratorConfig {
        seed,
        n_subjects,
        fs,
        duration,
        jitter_std_deg: 0.0,
        ..GeneratorConfig::default()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_matches_table() {
        let lay = layout();
        assert_eq!(lay.len(), 48);
        assert_eq!(lay[6 + 17].2, ViewAngle::deg(90.0, -33.0));
        assert_eq!(lay[6 + 23].2, ViewAngle::deg(90.0, 11.0));
        assert!(lay.iter().all(|(_, _, a)| a.is_valid()));
    }

    #[test]
    fn zero_jitter_keeps_nominal() {
        let recs = panobench_synthetic(5, 2, 250.0, 2.0).unwrap();
        assert_eq!(recs.len(), 2);
        for r in &recs {
            assert_eq!(r.leads.len(), 48);
            assert_eq!(r.n_samples(), 500);
            assert!(r.leads.iter().all(|l| l.nominal_angle == l.true_angle));
        }
    }

    #[test]
    fn jitter_moves_true_angles() {
        let cfg = GeneratorConfig {
            n_subjects: 1,
            duration: 1.0,
            ..GeneratorConfig::default()
        };
        let r = &generate(&cfg).unwrap()[0];
        assert!(r.leads.iter().any(|l| l.nominal_angle != l.true_angle));
        assert!(r.leads.iter().all(|l| l.true_angle.separation(&l.nominal_angle) <= 64.0));
    }
}
