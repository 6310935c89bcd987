//! Slice-level numeric kernels behind the differentiable operations.
//!
//! Every kernel accumulates into its output buffer (`+=`) so the backward
//! pass can sum contributions from several consumers without temporaries.

use crate::scalar::Scalar;

/// `out[m×n] += a[m×k] · b[k×n]`.
pub fn matmul_acc<T: Scalar>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// `ga[m×k] += g[m×n] · bᵀ`.
pub fn matmul_grad_a<T: Scalar>(g: &[T], b: &[T], ga: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            let mut acc = T::zero();
            for (&gv, &bv) in grow.iter().zip(brow) {
                acc += gv * bv;
            }
            ga[i * k + p] += acc;
        }
    }
}

/// `gb[k×n] += aᵀ · g[m×n]`.
pub fn matmul_grad_b<T: Scalar>(a: &[T], g: &[T], gb: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let gbrow = &mut gb[p * n..(p + 1) * n];
            for (o, &gv) in gbrow.iter_mut().zip(grow) {
                *o += av * gv;
            }
        }
    }
}

/// Geometry of a batched 1-D cross-correlation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub batch: usize,
    pub c_in: usize,
    pub t_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub t_out: usize,
}

impl ConvGeom {
    /// Returns `None` when the kernel is wider than the padded input.
    pub fn new(
        batch: usize,
        c_in: usize,
        t_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Option<Self> {
        if stride == 0 || kernel == 0 || kernel > t_in + 2 * padding {
            return None;
        }
        let t_out = (t_in + 2 * padding - kernel) / stride + 1;
        Some(ConvGeom {
            batch,
            c_in,
            t_in,
            c_out,
            kernel,
            stride,
            padding,
            t_out,
        })
    }

    /// Output positions `o` for which tap `kk` reads inside the input.
    #[inline]
    fn valid(&self, kk: usize) -> (usize, usize) {
        let s = self.stride as isize;
        let off = kk as isize - self.padding as isize;
        // smallest o with o*s + off >= 0
        let lo = if off >= 0 { 0 } else { (-off + s - 1) / s };
        // largest o with o*s + off <= t_in - 1
        let top = self.t_in as isize - 1 - off;
        let hi = if top < 0 { -1 } else { top / s };
        let hi = hi.min(self.t_out as isize - 1);
        if hi < lo {
            (0, 0)
        } else {
            (lo as usize, hi as usize + 1)
        }
    }
}

pub fn conv1d_forward<T: Scalar>(g: &ConvGeom, x: &[T], w: &[T], out: &mut [T]) {
    let (ci_n, co_n, k, s, t, to) = (g.c_in, g.c_out, g.kernel, g.stride, g.t_in, g.t_out);
    for b in 0..g.batch {
        for co in 0..co_n {
            let orow = &mut out[(b * co_n + co) * to..(b * co_n + co + 1) * to];
            for ci in 0..ci_n {
                let xrow = &x[(b * ci_n + ci) * t..(b * ci_n + ci + 1) * t];
                let wrow = &w[(co * ci_n + ci) * k..(co * ci_n + ci + 1) * k];
                for (kk, &wv) in wrow.iter().enumerate() {
                    let (lo, hi) = g.valid(kk);
                    if lo >= hi {
                        continue;
                    }
                    let start = lo * s + kk - g.padding;
                    if s == 1 {
                        let src = &xrow[start..start + (hi - lo)];
                        for (o, &xv) in orow[lo..hi].iter_mut().zip(src) {
                            *o += wv * xv;
                        }
                    } else {
                        for (j, o) in orow[lo..hi].iter_mut().enumerate() {
                            *o += wv * xrow[start + j * s];
                        }
                    }
                }
            }
        }
    }
}

/// Accumulates input and weight gradients of [`conv1d_forward`].
pub fn conv1d_backward<T: Scalar>(
    g: &ConvGeom,
    x: &[T],
    w: &[T],
    gout: &[T],
    mut gx: Option<&mut [T]>,
    mut gw: Option<&mut [T]>,
) {
    let (ci_n, co_n, k, s, t, to) = (g.c_in, g.c_out, g.kernel, g.stride, g.t_in, g.t_out);
    for b in 0..g.batch {
        for co in 0..co_n {
            let grow = &gout[(b * co_n + co) * to..(b * co_n + co + 1) * to];
            for ci in 0..ci_n {
                let xoff = (b * ci_n + ci) * t;
                let woff = (co * ci_n + ci) * k;
                for kk in 0..k {
                    let (lo, hi) = g.valid(kk);
                    if lo >= hi {
                        continue;
                    }
                    let start = lo * s + kk - g.padding;
                    if let Some(gx) = gx.as_deref_mut() {
                        let wv = w[woff + kk];
                        let gxrow = &mut gx[xoff..xoff + t];
                        for (j, &gv) in grow[lo..hi].iter().enumerate() {
                            gxrow[start + j * s] += wv * gv;
                        }
                    }
                    if let Some(gw) = gw.as_deref_mut() {
                        let xrow = &x[xoff..xoff + t];
                        let mut acc = T::zero();
                        for (j, &gv) in grow[lo..hi].iter().enumerate() {
                            acc += gv * xrow[start + j * s];
                        }
                        gw[woff + kk] += acc;
                    }
                }
            }
        }
    }
}

/// Splits a shape at `axis` into `(outer, len, inner)` extents.
pub fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// Softmax along the middle extent of an `(outer, n, inner)` layout.
pub fn softmax_forward<T: Scalar>(x: &[T], out: &mut [T], outer: usize, n: usize, inner: usize) {
    for o in 0..outer {
        for i in 0..inner {
            let idx = |j: usize| (o * n + j) * inner + i;
            let mut max = f64::NEG_INFINITY;
            for j in 0..n {
                max = max.max(x[idx(j)].wide());
            }
            let mut sum = 0.0f64;
            for j in 0..n {
                let e = (x[idx(j)].wide() - max).exp();
                out[idx(j)] = T::lit(e);
                sum += e;
            }
            for j in 0..n {
                out[idx(j)] = T::lit(out[idx(j)].wide() / sum);
            }
        }
    }
}

/// `gx += y ⊙ (g − ⟨g, y⟩)` per slice.
pub fn softmax_backward<T: Scalar>(
    y: &[T],
    g: &[T],
    gx: &mut [T],
    outer: usize,
    n: usize,
    inner: usize,
) {
    for o in 0..outer {
        for i in 0..inner {
            let idx = |j: usize| (o * n + j) * inner + i;
            let dot: f64 = (0..n).map(|j| g[idx(j)].wide() * y[idx(j)].wide()).sum();
            for j in 0..n {
                let k = idx(j);
                gx[k] += T::lit(y[k].wide() * (g[k].wide() - dot));
            }
        }
    }
}

/// Per-slice mean and inverse standard deviation along the middle extent.
fn norm_stats<T: Scalar>(x: &[T], o: usize, i: usize, n: usize, inner: usize, eps: f64) -> (f64, f64) {
    let mut mean = 0.0;
    for j in 0..n {
        mean += x[(o * n + j) * inner + i].wide();
    }
    mean /= n as f64;
    let mut var = 0.0;
    for j in 0..n {
        let d = x[(o * n + j) * inner + i].wide() - mean;
        var += d * d;
    }
    var /= n as f64;
    (mean, 1.0 / (var + eps).sqrt())
}

/// Layer normalisation along the middle extent with per-feature affine.
#[allow(clippy::too_many_arguments)]
pub fn layer_norm_forward<T: Scalar>(
    x: &[T],
    gamma: &[T],
    beta: &[T],
    out: &mut [T],
    outer: usize,
    n: usize,
    inner: usize,
    eps: f64,
) {
    for o in 0..outer {
        for i in 0..inner {
            let (mean, inv) = norm_stats(x, o, i, n, inner, eps);
            for j in 0..n {
                let k = (o * n + j) * inner + i;
                let xhat = (x[k].wide() - mean) * inv;
                out[k] = T::lit(xhat * gamma[j].wide() + beta[j].wide());
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub fn layer_norm_backward<T: Scalar>(
    x: &[T],
    gamma: &[T],
    g: &[T],
    mut gx: Option<&mut [T]>,
    mut ggamma: Option<&mut [T]>,
    mut gbeta: Option<&mut [T]>,
    outer: usize,
    n: usize,
    inner: usize,
    eps: f64,
) {
    let mut xhat = vec![0.0f64; n];
    let mut gxhat = vec![0.0f64; n];
    for o in 0..outer {
        for i in 0..inner {
            let (mean, inv) = norm_stats(x, o, i, n, inner, eps);
            let mut m1 = 0.0;
            let mut m2 = 0.0;
            for j in 0..n {
                let k = (o * n + j) * inner + i;
                xhat[j] = (x[k].wide() - mean) * inv;
                gxhat[j] = g[k].wide() * gamma[j].wide();
                m1 += gxhat[j];
                m2 += gxhat[j] * xhat[j];
                if let Some(gg) = ggamma.as_deref_mut() {
                    gg[j] += T::lit(g[k].wide() * xhat[j]);
                }
                if let Some(gb) = gbeta.as_deref_mut() {
                    gb[j] += g[k];
                }
            }
            if let Some(gx) = gx.as_deref_mut() {
                m1 /= n as f64;
                m2 /= n as f64;
                for j in 0..n {
                    let k = (o * n + j) * inner + i;
                    gx[k] += T::lit(inv * (gxhat[j] - m1 - xhat[j] * m2));
                }
            }
        }
    }
}

/// Source taps `(i0, i1, frac)` for output sample `j` of a linear upsample,
/// mapping `j ↦ j / factor` and clamping at the right edge.
#[inline]
pub fn upsample_taps(j: usize, factor: usize, t: usize) -> (usize, usize, f64) {
    let i0 = j / factor;
    let frac = (j % factor) as f64 / factor as f64;
    let i1 = (i0 + 1).min(t - 1);
    (i0, i1, frac)
}

/// Linear upsampling of `rows` independent signals of length `t`.
pub fn upsample_forward<T: Scalar>(x: &[T], out: &mut [T], rows: usize, t: usize, factor: usize) {
    let to = t * factor;
    for r in 0..rows {
        let xr = &x[r * t..(r + 1) * t];
        let or = &mut out[r * to..(r + 1) * to];
        for (j, o) in or.iter_mut().enumerate() {
            let (i0, i1, frac) = upsample_taps(j, factor, t);
            *o = T::lit((1.0 - frac) * xr[i0].wide() + frac * xr[i1].wide());
        }
    }
}

pub fn upsample_backward<T: Scalar>(g: &[T], gx: &mut [T], rows: usize, t: usize, factor: usize) {
    let to = t * factor;
    for r in 0..rows {
        let gr = &g[r * to..(r + 1) * to];
        let gxr = &mut gx[r * t..(r + 1) * t];
        for (j, &gv) in gr.iter().enumerate() {
            let (i0, i1, frac) = upsample_taps(j, factor, t);
            gxr[i0] += T::lit((1.0 - frac) * gv.wide());
            gxr[i1] += T::lit(frac * gv.wide());
        }
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// Tanh approximation of GELU.
#[inline]
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

#[inline]
pub fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let th = u.tanh();
    let du = GELU_C * (1.0 + 3.0 * GELU_A * x * x);
    0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * du
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_valid_range_covers_padding() {
        let g = ConvGeom::new(1, 1, 5, 1, 3, 2, 1).unwrap();
        assert_eq!(g.t_out, 3);
        // tap 0 reads x[2o - 1], valid for o = 1, 2
        assert_eq!(g.valid(0), (1, 3));
        assert_eq!(g.valid(1), (0, 3));
        // tap 2 reads x[2o + 1], valid for o = 0, 1
        assert_eq!(g.valid(2), (0, 2));
    }

    #[test]
    fn conv_geom_rejects_wide_kernel() {
        assert!(ConvGeom::new(1, 1, 2, 1, 5, 1, 1).is_none());
        assert!(ConvGeom::new(1, 1, 3, 1, 5, 1, 1).is_some());
    }

    #[test]
    fn upsample_convention() {
        let mut out = [0.0f64; 4];
        upsample_forward(&[0.0, 2.0], &mut out, 1, 2, 2);
        assert_eq!(out, [0.0, 1.0, 2.0, 2.0]);
    }

    #[test]
    fn gelu_matches_reference_points() {
        assert_eq!(gelu(0.0), 0.0);
        assert!((gelu(1.0) - 0.841_192).abs() < 1e-5);
        let h = 1e-6;
        for &x in &[-2.0, -0.3, 0.0, 0.7, 3.0] {
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-7);
        }
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0);
        assert!((sigmoid(800.0) - 1.0).abs() < 1e-15);
    }
}
