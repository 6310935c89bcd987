use serde::{Deserialize, Serialize};

use crate::dipole::DipoleError;

/// Viewing direction in degrees: `theta` is the polar angle from +z,
/// `phi` the azimuth from +x towards +y.
///
/// Body frame: +x anterior, +y towards the left arm, +z towards the head.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViewAngle {
    pub theta: f64,
    pub phi: f64,
}

impl ViewAngle {
    /// Validated constructor: `theta ∈ [0, 180]`, `phi ∈ (-180, 180]`.
    pub fn new(theta: f64, phi: f64) -> Result<Self, DipoleError> {
        if !(0.0..=180.0).contains(&theta) || !(phi > -180.0 && phi <= 180.0) {
            return Err(DipoleError::InvalidAngle { theta, phi });
        }
        Ok(ViewAngle { theta, phi })
    }

    /// Constructor for table constants known to be in range.
    pub const fn deg(theta: f64, phi: f64) -> Self {
        ViewAngle { theta, phi }
    }

    pub fn is_valid(&self) -> bool {
        ViewAngle::new(self.theta, self.phi).is_ok()
    }

    /// Unit vector `(sinθ cosφ, sinθ sinφ, cosθ)`.
    pub fn unit_direction(&self) -> [f64; 3] {
        let (t, p) = (self.theta.to_radians(), self.phi.to_radians());
        [t.sin() * p.cos(), t.sin() * p.sin(), t.cos()]
    }

    /// The angle displaced by `(dtheta, dphi)` and folded back into the
    /// canonical ranges while keeping the same physical direction.
    pub fn offset(&self, dtheta: f64, dphi: f64) -> ViewAngle {
        let mut theta = self.theta + dtheta;
        let mut phi = self.phi + dphi;
        theta = theta.rem_euclid(360.0);
        if theta > 180.0 {
            theta = 360.0 - theta;
            phi += 180.0;
        }
        ViewAngle {
            theta,
            phi: wrap_phi(phi),
        }
    }

    /// Angle between the two viewing directions, in degrees.
    pub fn separation(&self, other: &ViewAngle) -> f64 {
        let (a, b) = (self.unit_direction(), other.unit_direction());
        let dot = (a[0] * b[0] + a[1] * b[1] + a[2] * b[2]).clamp(-1.0, 1.0);
        dot.acos().to_degrees()
    }
}

/// Wraps an azimuth into `(-180, 180]`.
pub fn wrap_phi(phi: f64) -> f64 {
    let w = (phi + 180.0).rem_euclid(360.0) - 180.0;
    if w == -180.0 {
        180.0
    } else {
        w
    }
}
