//! Lead projections of the dipole and the Wilson central terminal.

use crate::dipole::{DipoleError, DipoleTrajectory, ViewAngle};
use crate::scalar::Scalar;

/// Far-field lead signal `V(t) = p(t)·r̂`.
pub fn project_lead_far<T: Scalar>(p: &DipoleTrajectory<T>, angle: ViewAngle) -> Vec<T> {
    project_direction(p, angle.unit_direction())
}

/// Projection onto an arbitrary (not necessarily unit) direction.
pub fn project_direction<T: Scalar>(p: &DipoleTrajectory<T>, dir: [f64; 3]) -> Vec<T> {
    let r = dir.map(T::lit);
    p.samples
        .iter()
        .map(|s| s[0] * r[0] + s[1] * r[1] + s[2] * r[2])
        .collect()
}

/// Dipole potential at `electrode` for a source at `heart_center` in a
/// homogeneous medium of conductivity `sigma`:
/// `V = p·(x − x0) / (4πσ |x − x0|³)`.
pub fn project_lead_full<T: Scalar>(
    p: &DipoleTrajectory<T>,
    electrode: [f64; 3],
    heart_center: [f64; 3],
    sigma: f64,
) -> Result<Vec<T>, DipoleError> {
    let d = [
        electrode[0] - heart_center[0],
        electrode[1] - heart_center[1],
        electrode[2] - heart_center[2],
    ];
    let r = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
    if r <= 0.01 {
        return Err(DipoleError::Singularity { distance: r });
    }
    if sigma <= 0.0 {
        return Err(DipoleError::InvalidConfig(format!("conductivity {sigma} must be positive")));
    }
    let k = 1.0 / (4.0 * std::f64::consts::PI * sigma * r * r * r);
    Ok(project_direction(p, d.map(|x| x * k)))
}

/// Mean of the three limb electrode potentials.
pub fn wilson_terminal<T: Scalar>(ra: &[T], la: &[T], ll: &[T]) -> Result<Vec<T>, DipoleError> {
    if ra.len() != la.len() || ra.len() != ll.len() {
        return Err(DipoleError::LengthMismatch {
            expected: ra.len(),
            found: if ra.len() != la.len() { la.len() } else { ll.len() },
        });
    }
    let third = T::lit(1.0 / 3.0);
    Ok(ra
        .iter()
        .zip(la)
        .zip(ll)
        .map(|((&a, &b), &c)| (a + b + c) * third)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant(p: [f64; 3], n: usize) -> DipoleTrajectory<f64> {
        let mut t = DipoleTrajectory::zeros(250.0, n);
        t.samples.iter_mut().for_each(|s| *s = p);
        t
    }

    #[test]
    fn aligned_and_orthogonal() {
        let p = constant([1.0, 0.0, 0.0], 4);
        assert!(project_lead_far(&p, ViewAngle::deg(90.0, 0.0))
            .iter()
            .all(|&v| (v - 1.0).abs() < 1e-15));
        let q = constant([0.3, -0.7, 0.0], 4);
        assert!(project_lead_far(&q, ViewAngle::deg(0.0, 0.0)).iter().all(|&v| v.abs() < 1e-15));
    }

    #[test]
    fn full_potential_laws() {
        let p = constant([1.0, 0.0, 0.0], 1);
        let sigma = 1.0 / (4.0 * std::f64::consts::PI);
        let v1 = project_lead_full(&p, [1.0, 0.0, 0.0], [0.0; 3], sigma).unwrap()[0];
        assert!((v1 - 1.0).abs() < 1e-12);
        let dir = [0.6, 0.8, 0.0];
        let q = constant([0.2, 0.5, -0.1], 1);
        let a = project_lead_full(&q, dir, [0.0; 3], 1.0).unwrap()[0];
        let b = project_lead_full(&q, dir.map(|x| 2.0 * x), [0.0; 3], 1.0).unwrap()[0];
        let c = project_lead_full(&q, dir, [0.0; 3], 2.0).unwrap()[0];
        assert!((a / b - 4.0).abs() < 1e-12);
        assert!((a / c - 2.0).abs() < 1e-12);
        assert!(matches!(
            project_lead_full(&q, [0.001, 0.0, 0.0], [0.0; 3], 1.0),
            Err(DipoleError::Singularity { .. })
        ));
    }

    #[test]
    fn wilson_mean() {
        let w = wilson_terminal(&[3.0f32, 1.0], &[0.0, 1.0], &[0.0, 1.0]).unwrap();
        assert_eq!(w, vec![1.0, 1.0]);
        assert!(wilson_terminal(&[1.0f32], &[1.0, 2.0], &[1.0]).is_err());
    }
}
