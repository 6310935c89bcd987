//! Least-squares dipole recovery and closed-form synthesis of any view.

use crate::dipole::{project_lead_far, DipoleError, DipoleTrajectory, ViewAngle};
use crate::scalar::Scalar;

/// Directions whose smallest singular value falls below this are rejected.
pub const MIN_SINGULAR_VALUE: f64 = 1e-6;

/// Eigenvalues of a symmetric 3×3 matrix by cyclic Jacobi rotations.
fn sym_eigenvalues(mut a: [[f64; 3]; 3]) -> [f64; 3] {
    for _ in 0..64 {
        let off = a[0][1].powi(2) + a[0][2].powi(2) + a[1][2].powi(2);
        if off < 1e-30 {
            break;
        }
        for (p, q) in [(0, 1), (0, 2), (1, 2)] {
            if a[p][q].abs() < 1e-300 {
                continue;
            }
            let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
            let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
            let t = if theta == 0.0 { 1.0 } else { t };
            let c = 1.0 / (t * t + 1.0).sqrt();
            let s = t * c;
            let mut b = a;
            for k in 0..3 {
                b[k][p] = c * a[k][p] - s * a[k][q];
                b[k][q] = s * a[k][p] + c * a[k][q];
            }
            let mut d = b;
            for k in 0..3 {
                d[p][k] = c * b[p][k] - s * b[q][k];
                d[q][k] = s * b[p][k] + c * b[q][k];
            }
            a = d;
        }
    }
    [a[0][0], a[1][1], a[2][2]]
}

fn inverse3(m: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let c = |r0: usize, r1: usize, c0: usize, c1: usize| m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0];
    let cof = [
        [c(1, 2, 1, 2), -c(1, 2, 0, 2), c(1, 2, 0, 1)],
        [-c(0, 2, 1, 2), c(0, 2, 0, 2), -c(0, 2, 0, 1)],
        [c(0, 1, 1, 2), -c(0, 1, 0, 2), c(0, 1, 0, 1)],
    ];
    let det = m[0][0] * cof[0][0] + m[0][1] * cof[0][1] + m[0][2] * cof[0][2];
    let mut inv = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            inv[i][j] = cof[j][i] / det;
        }
    }
    inv
}

/// Precomputed pseudo-inverse `(AᵀA)⁻¹Aᵀ` for a fixed set of lead directions.
#[derive(Debug, Clone)]
pub struct LeadGeometry {
    pinv: Vec<[f64; 3]>,
    pub singular_values: [f64; 3],
}

impl LeadGeometry {
    pub fn new(angles: &[ViewAngle]) -> Result<Self, DipoleError> {
        let rows: Vec<[f64; 3]> = angles.iter().map(|a| a.unit_direction()).collect();
        let mut ata = [[0.0; 3]; 3];
        for r in &rows {
            for i in 0..3 {
                for j in 0..3 {
                    ata[i][j] += r[i] * r[j];
                }
            }
        }
        let mut sv = sym_eigenvalues(ata).map(|e| e.max(0.0).sqrt());
        sv.sort_by(|a, b| b.total_cmp(a));
        if rows.len() < 3 || sv[2] <= MIN_SINGULAR_VALUE {
            let condition = if sv[2] > 0.0 { sv[0] / sv[2] } else { f64::INFINITY };
            return Err(DipoleError::DegenerateGeometry {
                condition,
                leads: rows.len(),
            });
        }
        let inv = inverse3(&ata);
        let pinv = rows
            .iter()
            .map(|r| {
                let mut col = [0.0; 3];
                for (i, c) in col.iter_mut().enumerate() {
                    *c = inv[i][0] * r[0] + inv[i][1] * r[1] + inv[i][2] * r[2];
                }
                col
            })
            .collect();
        Ok(LeadGeometry {
            pinv,
            singular_values: sv,
        })
    }

    pub fn condition(&self) -> f64 {
        self.singular_values[0] / self.singular_values[2]
    }
}

/// Per-sample least-squares fit of `p` to far-field lead signals.
pub fn estimate_dipole_lsq<T: Scalar>(
    signals: &[&[T]],
    angles: &[ViewAngle],
    fs: f64,
) -> Result<DipoleTrajectory<T>, DipoleError> {
    if signals.len() != angles.len() {
        return Err(DipoleError::LengthMismatch {
            expected: angles.len(),
            found: signals.len(),
        });
    }
    let geo = LeadGeometry::new(angles)?;
    let n = signals[0].len();
    if let Some(bad) = signals.iter().find(|s| s.len() != n) {
        return Err(DipoleError::LengthMismatch {
            expected: n,
            found: bad.len(),
        });
    }
    let mut out = DipoleTrajectory::zeros(fs, n);
    for (t, slot) in out.samples.iter_mut().enumerate() {
        let mut p = [0.0f64; 3];
        for (s, w) in signals.iter().zip(&geo.pinv) {
            let v = s[t].wide();
            p[0] += w[0] * v;
            p[1] += w[1] * v;
            p[2] += w[2] * v;
        }
        *slot = p.map(T::lit);
    }
    Ok(out)
}

/// Closed-form synthesis of a query view from a recovered dipole.
pub fn oracle_synthesize<T: Scalar>(p: &DipoleTrajectory<T>, query: ViewAngle) -> Vec<T> {
    project_lead_far(p, query)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dipole::synth_dipole_trajectory;
    use crate::rng::Seed;

    #[test]
    fn orthogonal_leads_invert_exactly() {
        let p = synth_dipole_trajectory::<f64>(Seed(2), 70.0, 2.0, 250.0).unwrap();
        let angles = [
            ViewAngle::deg(90.0, 0.0),
            ViewAngle::deg(90.0, 90.0),
            ViewAngle::deg(0.0, 0.0),
        ];
        let sig: Vec<Vec<f64>> = angles.iter().map(|a| project_lead_far(&p, *a)).collect();
        let refs: Vec<&[f64]> = sig.iter().map(|s| s.as_slice()).collect();
        let est = estimate_dipole_lsq(&refs, &angles, 250.0).unwrap();
        for (a, b) in est.samples.iter().zip(&p.samples) {
            for d in 0..3 {
                assert!((a[d] - b[d]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn coplanar_is_degenerate() {
        let angles = [
            ViewAngle::deg(90.0, 0.0),
            ViewAngle::deg(90.0, 60.0),
            ViewAngle::deg(90.0, 120.0),
        ];
        let err = LeadGeometry::new(&angles).unwrap_err();
        assert!(matches!(err, DipoleError::DegenerateGeometry { .. }));
        assert!(err.to_string().contains("condition"));
    }

    #[test]
    fn eigenvalues_of_diagonal_and_rotated() {
        let e = sym_eigenvalues([[3.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 2.0]]);
        let mut e = e.to_vec();
        e.sort_by(f64::total_cmp);
        assert_eq!(e, vec![1.0, 2.0, 3.0]);
        let mut r = sym_eigenvalues([[2.0, 1.0, 0.0], [1.0, 2.0, 0.0], [0.0, 0.0, 5.0]]).to_vec();
        r.sort_by(f64::total_cmp);
        for (a, b) in r.iter().zip([1.0, 3.0, 5.0]) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
