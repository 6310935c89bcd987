//! Synthetic cardiac dipole trajectories built from Gaussian wave packets.

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dipole::DipoleError;
use crate::rng::Seed;
use crate::scalar::Scalar;

/// One Gaussian deflection of the dipole loop within a beat.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WavePacket {
    /// Seconds from beat onset at a 1 s cycle; scaled with the actual period.
    pub center: f64,
    /// Gaussian standard deviation in seconds.
    pub width: f64,
    /// Dipole-space direction times magnitude (millivolt equivalent).
    pub amplitude: [f64; 3],
}

/// The five-wave beat template (P, Q, R, S, T).
pub fn default_packets() -> Vec<WavePacket> {
    vec![
        WavePacket { center: 0.20, width: 0.025, amplitude: [0.03, 0.10, -0.08] },
        WavePacket { center: 0.365, width: 0.010, amplitude: [-0.05, -0.10, 0.06] },
        WavePacket { center: 0.39, width: 0.011, amplitude: [0.40, 0.80, -0.65] },
        WavePacket { center: 0.415, width: 0.012, amplitude: [-0.22, -0.12, 0.15] },
        WavePacket { center: 0.68, width: 0.055, amplitude: [0.14, 0.22, -0.16] },
    ]
}

/// Index of the R packet in [`default_packets`]; Q and S flank it.
pub const QRS_PACKETS: std::ops::RangeInclusive<usize> = 1..=3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryConfig {
    pub heart_rate_bpm: f64,
    pub duration_s: f64,
    pub fs: f64,
    pub packets: Vec<WavePacket>,
    /// Standard deviation of the per-subject rotation angle, degrees.
    pub rotation_std_deg: f64,
    /// Log-normal spread of the per-subject amplitude scale.
    pub amplitude_log_std: f64,
    /// Relative beat-to-beat jitter of the cycle length.
    pub rr_jitter: f64,
    /// Per-subject perturbation of each packet amplitude vector, as a
    /// fraction of its norm; varies the loop shape, not just its pose.
    pub packet_jitter: f64,
}

impl TrajectoryConfig {
    pub fn new(heart_rate_bpm: f64, duration_s: f64, fs: f64) -> Self {
        TrajectoryConfig {
            heart_rate_bpm,
            duration_s,
            fs,
            packets: default_packets(),
            rotation_std_deg: 20.0,
            amplitude_log_std: 0.15,
            rr_jitter: 0.02,
            packet_jitter: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), DipoleError> {
        if !(40.0..=180.0).contains(&self.heart_rate_bpm) {
            return Err(DipoleError::InvalidConfig(format!(
                "heart rate {} outside [40, 180] bpm",
                self.heart_rate_bpm
            )));
        }
        if self.fs < 100.0 {
            return Err(DipoleError::InvalidConfig(format!("fs {} below 100 Hz", self.fs)));
        }
        if !(self.packet_jitter >= 0.0) {
            return Err(DipoleError::InvalidConfig("packet_jitter must be non-negative".into()));
        }
        if self.duration_s <= 0.0 {
            return Err(DipoleError::InvalidConfig("duration must be positive".into()));
        }
        for p in &self.packets {
            if p.width <= 0.0 || !(0.0..1.0).contains(&p.center) {
                return Err(DipoleError::InvalidConfig(format!("bad packet {p:?}")));
            }
        }
        Ok(())
    }

    pub fn n_samples(&self) -> usize {
        (self.duration_s * self.fs).round() as usize
    }
}

/// Time series of the cardiac dipole vector.
#[derive(Debug, Clone, PartialEq)]
pub struct DipoleTrajectory<T> {
    pub fs: f64,
    pub samples: Vec<[T; 3]>,
    /// Beat onsets in seconds (may start before zero).
    pub beat_onsets: Vec<f64>,
    /// Cycle length of each beat in seconds.
    pub beat_periods: Vec<f64>,
}

impl<T: Scalar> DipoleTrajectory<T> {
    pub fn zeros(fs: f64, n: usize) -> Self {
        DipoleTrajectory {
            fs,
            samples: vec![[T::zero(); 3]; n],
            beat_onsets: Vec::new(),
            beat_periods: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// `a·self + b·other`, sample by sample.
    pub fn combine(&self, a: T, other: &Self, b: T) -> Self {
        let samples = self
            .samples
            .iter()
            .zip(&other.samples)
            .map(|(p, q)| [a * p[0] + b * q[0], a * p[1] + b * q[1], a * p[2] + b * q[2]])
            .collect();
        DipoleTrajectory {
            fs: self.fs,
            samples,
            beat_onsets: self.beat_onsets.clone(),
            beat_periods: self.beat_periods.clone(),
        }
    }

    pub fn norms(&self) -> Vec<f64> {
        self.samples
            .iter()
            .map(|p| p.iter().map(|x| x.wide() * x.wide()).sum::<f64>().sqrt())
            .collect()
    }
}

/// Rotation by `angle` radians about a unit `axis` (Rodrigues).
fn rotation(axis: [f64; 3], angle: f64) -> [[f64; 3]; 3] {
    let [x, y, z] = axis;
    let (s, c) = angle.sin_cos();
    let t = 1.0 - c;
    [
        [t * x * x + c, t * x * y - s * z, t * x * z + s * y],
        [t * x * y + s * z, t * y * y + c, t * y * z - s * x],
        [t * x * z - s * y, t * y * z + s * x, t * z * z + c],
    ]
}

fn apply(m: &[[f64; 3]; 3], v: [f64; 3]) -> [f64; 3] {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

/// Generates a trajectory with the default beat template.
pub fn synth_dipole_trajectory<T: Scalar>(
    seed: Seed,
    heart_rate_bpm: f64,
    duration_s: f64,
    fs: f64,
) -> Result<DipoleTrajectory<T>, DipoleError> {
    synth_with(&TrajectoryConfig::new(heart_rate_bpm, duration_s, fs), seed)
}

/// Generates a trajectory: per-subject rotation and scale of every packet
/// amplitude, beat-to-beat cycle jitter, deterministic under `seed`.
pub fn synth_with<T: Scalar>(cfg: &TrajectoryConfig, seed: Seed) -> Result<DipoleTrajectory<T>, DipoleError> {
    cfg.validate()?;
    let mut rng = seed.rng();
    let n = cfg.n_samples();

    let axis = loop {
        let v: [f64; 3] = [
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        ];
        let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if norm > 1e-9 {
            break [v[0] / norm, v[1] / norm, v[2] / norm];
        }
    };
    let angle_deg: f64 = Normal::new(0.0, cfg.rotation_std_deg.max(0.0))
        .expect("finite std")
        .sample(&mut rng);
    let rot = rotation(axis, angle_deg.to_radians());
    let scale = (cfg.amplitude_log_std * rng.sample::<f64, _>(StandardNormal)).exp();
    let amps: Vec<[f64; 3]> = cfg
        .packets
        .iter()
        .map(|p| {
            let mut a = p.amplitude;
            if cfg.packet_jitter > 0.0 {
                let r = cfg.packet_jitter * a.iter().map(|x| x * x).sum::<f64>().sqrt();
                for x in &mut a {
                    *x += r * rng.sample::<f64, _>(StandardNormal);
                }
            }
            apply(&rot, a).map(|a| a * scale)
        })
        .collect();

    let period = 60.0 / cfg.heart_rate_bpm;
    let mut onsets = Vec::new();
    let mut periods = Vec::new();
    let mut onset = -rng.random::<f64>() * period;
    while onset < cfg.duration_s {
        let jitter: f64 = rng.sample(StandardNormal);
        let rr = period * (1.0 + cfg.rr_jitter * jitter).clamp(0.8, 1.2);
        onsets.push(onset);
        periods.push(rr);
        onset += rr;
    }

    let mut acc = vec![[0.0f64; 3]; n];
    for (&t0, &rr) in onsets.iter().zip(&periods) {
        for (p, amp) in cfg.packets.iter().zip(&amps) {
            let center = t0 + p.center * rr;
            let width = p.width * rr.sqrt();
            let lo = ((center - 6.0 * width) * cfg.fs).floor().max(0.0) as usize;
            let hi = (((center + 6.0 * width) * cfg.fs).ceil().max(0.0) as usize).min(n);
            for (i, slot) in acc.iter_mut().enumerate().take(hi).skip(lo) {
                let t = i as f64 / cfg.fs;
                let g = (-0.5 * ((t - center) / width).powi(2)).exp();
                for d in 0..3 {
                    slot[d] += amp[d] * g;
                }
            }
        }
    }
    Ok(DipoleTrajectory {
        fs: cfg.fs,
        samples: acc.into_iter().map(|p| p.map(T::lit)).collect(),
        beat_onsets: onsets,
        beat_periods: periods,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_under_seed() {
        let a = synth_dipole_trajectory::<f32>(Seed(11), 72.0, 10.0, 250.0).unwrap();
        let b = synth_dipole_trajectory::<f32>(Seed(11), 72.0, 10.0, 250.0).unwrap();
        assert_eq!(a, b);
        let c = synth_dipole_trajectory::<f32>(Seed(12), 72.0, 10.0, 250.0).unwrap();
        assert_ne!(a.samples, c.samples);
    }

    #[test]
    fn zero_packets_give_zero_trajectory() {
        let mut cfg = TrajectoryConfig::new(60.0, 2.0, 250.0);
        cfg.packets.clear();
        let t = synth_with::<f64>(&cfg, Seed(1)).unwrap();
        assert!(t.samples.iter().all(|p| p == &[0.0; 3]));
    }

    #[test]
    fn rejects_out_of_range_config() {
        assert!(synth_dipole_trajectory::<f32>(Seed(0), 200.0, 1.0, 250.0).is_err());
        assert!(synth_dipole_trajectory::<f32>(Seed(0), 60.0, 1.0, 50.0).is_err());
    }

    #[test]
    fn beat_peaks_fall_in_qrs_window() {
        let t = synth_dipole_trajectory::<f64>(Seed(3), 60.0, 10.0, 250.0).unwrap();
        assert_eq!(t.len(), 2500);
        let norms = t.norms();
        let packets = default_packets();
        let q = packets[*QRS_PACKETS.start()];
        let s = packets[*QRS_PACKETS.end()];
        let mut checked = 0;
        for (&t0, &rr) in t.beat_onsets.iter().zip(&t.beat_periods) {
            // whole beats only
            if t0 < 0.0 || t0 + rr > 10.0 {
                continue;
            }
            let lo = (t0 * 250.0).ceil() as usize;
            let hi = (((t0 + rr) * 250.0).floor() as usize).min(norms.len());
            let (arg, _) = norms[lo..hi]
                .iter()
                .enumerate()
                .fold((0, f64::MIN), |b, (i, &v)| if v > b.1 { (i, v) } else { b });
            let peak_t = (lo + arg) as f64 / 250.0;
            let w0 = t0 + q.center * rr - 3.0 * q.width * rr.sqrt();
            let w1 = t0 + s.center * rr + 3.0 * s.width * rr.sqrt();
            assert!(peak_t >= w0 && peak_t <= w1, "peak {peak_t} outside [{w0}, {w1}]");
            checked += 1;
        }
        assert!(checked >= 8);
    }
}
