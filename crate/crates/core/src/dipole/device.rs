//! Acquisition-device transfer: FIR filter, gain, baseline wander, noise.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dipole::DipoleError;
use crate::rng::Seed;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceProfile {
    pub name: String,
    pub gain: f64,
    pub noise_sigma: f64,
    /// Baseline wander as (amplitude, frequency in Hz).
    pub baseline_wander: (f64, f64),
    /// Centered, DC-preserving FIR taps (odd length keeps zero delay).
    pub fir_taps: Vec<f64>,
}

impl DeviceProfile {
    pub fn identity() -> Self {
        DeviceProfile {
            name: "identity".into(),
            gain: 1.0,
            noise_sigma: 0.0,
            baseline_wander: (0.0, 0.0),
            fir_taps: vec![1.0],
        }
    }

    /// Moving-average low-pass of `n` taps with gain `gain`.
    pub fn boxcar(name: &str, n: usize, gain: f64) -> Self {
        DeviceProfile {
            name: name.into(),
            gain,
            fir_taps: vec![1.0 / n as f64; n],
            ..DeviceProfile::identity()
        }
    }

    pub fn validate(&self) -> Result<(), DipoleError> {
        if !(self.gain > 0.0) {
            return Err(DipoleError::InvalidConfig(format!("gain {} must be positive", self.gain)));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(DipoleError::InvalidConfig("noise_sigma must be non-negative".into()));
        }
        if self.fir_taps.is_empty() {
            return Err(DipoleError::InvalidConfig("fir_taps must not be empty".into()));
        }
        let dc: f64 = self.fir_taps.iter().sum();
        if (dc - 1.0).abs() > 1e-6 {
            return Err(DipoleError::InvalidConfig(format!("fir_taps sum to {dc}, expected 1")));
        }
        Ok(())
    }
}

/// Applies the device chain in order: filter, gain, wander, noise.
/// Stages with neutral parameters are skipped so the identity profile is
/// exact.
pub fn apply_device<T: Scalar>(
    signal: &[T],
    profile: &DeviceProfile,
    fs: f64,
    seed: Seed,
) -> Result<Vec<T>, DipoleError> {
    profile.validate()?;
    let mut out: Vec<T> = if profile.fir_taps.len() == 1 && profile.fir_taps[0] == 1.0 {
        signal.to_vec()
    } else {
        fir_same(signal, &profile.fir_taps)
    };
    if profile.gain != 1.0 {
        let g = T::lit(profile.gain);
        out.iter_mut().for_each(|x| *x *= g);
    }
    let mut rng = seed.rng();
    let (amp, freq) = profile.baseline_wander;
    if amp != 0.0 {
        let phase = rng.random::<f64>() * std::f64::consts::TAU;
        for (i, x) in out.iter_mut().enumerate() {
            let t = i as f64 / fs;
            *x += T::lit(amp * (std::f64::consts::TAU * freq * t + phase).sin());
        }
    }
    if profile.noise_sigma > 0.0 {
        let normal = Normal::new(0.0, profile.noise_sigma).expect("validated sigma");
        for x in out.iter_mut() {
            *x += T::lit(normal.sample(&mut rng));
        }
    }
    Ok(out)
}

/// Centered convolution with edge replication; output length equals input.
fn fir_same<T: Scalar>(x: &[T], taps: &[f64]) -> Vec<T> {
    let n = x.len() as isize;
    let half = (taps.len() / 2) as isize;
    (0..n)
        .map(|i| {
            let acc: f64 = taps
                .iter()
                .enumerate()
                .map(|(k, &h)| {
                    let j = (i + k as isize - half).clamp(0, n - 1);
                    h * x[j as usize].wide()
                })
                .sum();
            T::lit(acc)
        })
        .collect()
}
