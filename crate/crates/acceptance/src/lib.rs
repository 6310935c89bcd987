//! Shared pieces of the acceptance run: the outcome line format and the
//! desk-scale fixtures every study criterion draws from.

use std::fmt;
use std::time::Duration;

use panoecg::dataset::{generate, panobench_synthetic, GeneratorConfig, MultiViewRecord};
use panoecg::dipole::DeviceProfile;

/// Result of one criterion.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub id: u8,
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
    pub elapsed: Duration,
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} [{:>2}] {}: {} ({:.0} s)",
            if self.pass { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.detail,
            self.elapsed.as_secs_f64()
        )
    }
}

/// Training/test split of the identity-device benchmark.
pub const N_SUBJECTS: usize = 200;
pub const N_TRAIN: usize = 160;

pub fn benchmark() -> Vec<MultiViewRecord> {
    panobench_synthetic(7, N_SUBJECTS, 250.0, 10.0).expect("valid generator config")
}

/// A second acquisition device for the data-efficiency study: three-tap
/// low-pass with 30% gain, no noise.
pub fn device_benchmark(n: usize) -> Vec<MultiViewRecord> {
    let device = DeviceProfile {
        name: "lowpass".into(),
        gain: 1.3,
        fir_taps: vec![0.25, 0.5, 0.25],
        ..DeviceProfile::identity()
    };
    generate(&GeneratorConfig {
        seed: 23,
        n_subjects: n,
        jitter_std_deg: 0.0,
        devices: vec![device],
        ..GeneratorConfig::default()
    })
    .expect("valid generator config")
}

/// Selected criteria from a comma list such as `3,5`; `None` runs all.
pub fn parse_only(spec: Option<&str>) -> Option<Vec<u8>> {
    spec.map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect())
}

pub fn non_decreasing(xs: &[f64], slack: f64) -> bool {
    xs.windows(2).all(|w| w[1] >= w[0] - slack)
}

pub fn strictly_decreasing(xs: &[f64]) -> bool {
    xs.windows(2).all(|w| w[1] < w[0])
}

pub fn spread(xs: &[f64]) -> f64 {
    let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    hi - lo
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn orderings() {
        assert!(non_decreasing(&[1.0, 0.6, 2.0], 0.5));
        assert!(!non_decreasing(&[1.0, 0.4], 0.5));
        assert!(strictly_decreasing(&[3.0, 2.0, 1.0]));
        assert!(!strictly_decreasing(&[3.0, 3.0]));
        assert_eq!(spread(&[2.0, -1.0, 0.5]), 3.0);
        assert_eq!(parse_only(Some("3, 5")), Some(vec![3, 5]));
        assert_eq!(parse_only(None), None);
    }
}
