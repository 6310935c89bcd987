//! Spectral normalisation by power iteration.

use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Lower bound on the estimated singular value.
pub const SIGMA_FLOOR: f64 = 1e-12;

/// `uᵀ W v` for a row-major `rows × cols` matrix.
pub fn bilinear<T: Scalar>(w: &[T], u: &[f64], v: &[f64], rows: usize, cols: usize) -> f64 {
    let mut acc = 0.0;
    for i in 0..rows {
        let row = &w[i * cols..(i + 1) * cols];
        let dot: f64 = row.iter().zip(v).map(|(a, b)| a.wide() * b).sum();
        acc += u[i] * dot;
    }
    acc
}

fn normalize(x: &mut [f64]) {
    let n = x.iter().map(|a| a * a).sum::<f64>().sqrt();
    if n > SIGMA_FLOOR {
        x.iter_mut().for_each(|a| *a /= n);
    }
}

/// Runs `n_iters` power iterations from `u`, updating it in place.
/// Returns the right vector `v` and the estimate `σ = uᵀ W v`.
pub fn power_iterate<T: Scalar>(
    w: &[T],
    rows: usize,
    cols: usize,
    u: &mut [f64],
    n_iters: usize,
) -> (Vec<f64>, f64) {
    let mut v = vec![0.0; cols];
    let right = |u: &[f64], v: &mut [f64]| {
        v.iter_mut().for_each(|x| *x = 0.0);
        for i in 0..rows {
            for j in 0..cols {
                v[j] += w[i * cols + j].wide() * u[i];
            }
        }
        normalize(v);
    };
    right(u, &mut v);
    for _ in 0..n_iters {
        for (i, ui) in u.iter_mut().enumerate() {
            *ui = (0..cols).map(|j| w[i * cols + j].wide() * v[j]).sum();
        }
        normalize(u);
        right(u, &mut v);
    }
    let sigma = bilinear(w, u, &v, rows, cols);
    (v, sigma)
}

/// Returns `w / σ̂` where `σ̂` is the leading singular value of `w` viewed
/// as `[shape[0], rest]`, estimated with `n_iters` power iterations from
/// the persistent vector `u_state`.
pub fn spectral_normalize<T: Scalar>(w: &Tensor<T>, u_state: &mut [f64], n_iters: usize) -> Tensor<T> {
    let rows = w.shape()[0];
    let cols = w.numel() / rows.max(1);
    assert_eq!(u_state.len(), rows, "u_state length must equal the output dimension");
    let (_, sigma) = power_iterate(w.data(), rows, cols, u_state, n_iters);
    let sigma = sigma.max(SIGMA_FLOOR);
    w.map(|x| T::lit(x.wide() / sigma))
}
