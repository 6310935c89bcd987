use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::rng::Seed;

/// Largest displacement a placement error may take, degrees.
pub const MAX_JITTER_DEG: f64 = 45.0;

/// Default spread of electrode placement error, degrees.
pub const DEFAULT_JITTER_STD_DEG: f64 = 10.6;

/// Per-lead electrode displacement `(dtheta, dphi)` in degrees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlacementJitter {
    pub offsets: Vec<(f64, f64)>,
}

impl PlacementJitter {
    pub fn none(n_leads: usize) -> Self {
        PlacementJitter {
            offsets: vec![(0.0, 0.0); n_leads],
        }
    }

    /// Zero-mean normal displacements clamped to ±[`MAX_JITTER_DEG`].
    pub fn sample(seed: Seed, n_leads: usize, std_deg: f64) -> Self {
        if std_deg <= 0.0 {
            return PlacementJitter::none(n_leads);
        }
        let mut rng = seed.rng();
        let normal = Normal::new(0.0, std_deg).expect("positive std");
        let mut draw = || normal.sample(&mut rng).clamp(-MAX_JITTER_DEG, MAX_JITTER_DEG);
        PlacementJitter {
            offsets: (0..n_leads).map(|_| (draw(), draw())).collect(),
        }
    }
}
