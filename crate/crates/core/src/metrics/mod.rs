//! Signal fidelity metrics for 1-D leads and report containers.

mod report;

pub use report::{LeadMetric, MetricReport, Task};

use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Upper bound reported when the error vanishes.
pub const PSNR_CAP: f64 = 99.0;
pub const SSIM_WINDOW: usize = 64;
pub const SSIM_SIGMA: f64 = 8.0;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricError {
    #[error("length mismatch: prediction {pred}, target {target}")]
    LengthMismatch { pred: usize, target: usize },
    #[error("target is constant, dynamic range undefined")]
    ConstantTarget,
    #[error("signal of {len} samples is shorter than the {window}-sample window")]
    TooShort { len: usize, window: usize },
}

fn range(y: &[f64]) -> f64 {
    let (lo, hi) = y
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    hi - lo
}

fn widen<T: Scalar>(x: &[T]) -> Vec<f64> {
    x.iter().map(|v| v.wide()).collect()
}

fn check(pred: usize, target: usize) -> Result<(), MetricError> {
    if pred != target {
        return Err(MetricError::LengthMismatch { pred, target });
    }
    Ok(())
}

/// `10·log10(R² / MSE)` with `R` the dynamic range of `target`, capped.
pub fn psnr<T: Scalar>(pred: &[T], target: &[T]) -> Result<f64, MetricError> {
    check(pred.len(), target.len())?;
    let y = widen(target);
    let r = range(&y);
    if !(r > 0.0) {
        return Err(MetricError::ConstantTarget);
    }
    let mse = pred
        .iter()
        .zip(&y)
        .map(|(a, b)| (a.wide() - b).powi(2))
        .sum::<f64>()
        / y.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (r * r / mse).log10()).min(PSNR_CAP))
}

/// Normalised Gaussian weights of the SSIM window.
pub fn ssim_window() -> Vec<f64> {
    let c = (SSIM_WINDOW as f64 - 1.0) / 2.0;
    let w: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-0.5 * ((i as f64 - c) / SSIM_SIGMA).powi(2)).exp())
        .collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Mean SSIM over every full window position.
pub fn ssim_1d<T: Scalar>(pred: &[T], target: &[T]) -> Result<f64, MetricError> {
    check(pred.len(), target.len())?;
    let n = target.len();
    if n < SSIM_WINDOW {
        return Err(MetricError::TooShort {
            len: n,
            window: SSIM_WINDOW,
        });
    }
    let x = widen(pred);
    let y = widen(target);
    let r = range(&y);
    if !(r > 0.0) {
        return Err(MetricError::ConstantTarget);
    }
    let c1 = (K1 * r).powi(2);
    let c2 = (K2 * r).powi(2);
    let w = ssim_window();
    let mut total = 0.0;
    let positions = n - SSIM_WINDOW + 1;
    for s in 0..positions {
        let xs = &x[s..s + SSIM_WINDOW];
        let ys = &y[s..s + SSIM_WINDOW];
        let (mut mx, mut my) = (0.0, 0.0);
        for ((wi, a), b) in w.iter().zip(xs).zip(ys) {
            mx += wi * a;
            my += wi * b;
        }
        let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
        for ((wi, a), b) in w.iter().zip(xs).zip(ys) {
            vx += wi * (a - mx) * (a - mx);
            vy += wi * (b - my) * (b - my);
            cxy += wi * (a - mx) * (b - my);
        }
        total += ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
    }
    Ok(total / positions as f64)
}

fn rows<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<usize, MetricError> {
    if pred.shape() != target.shape() || pred.shape().len() != 2 {
        return Err(MetricError::LengthMismatch {
            pred: pred.numel(),
            target: target.numel(),
        });
    }
    Ok(pred.shape()[0])
}

/// Per-lead PSNR of `[leads, t]` tensors.
pub fn psnr_leads<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<Vec<f64>, MetricError> {
    (0..rows(pred, target)?).map(|i| psnr(pred.row(i), target.row(i))).collect()
}

/// Per-lead SSIM of `[leads, t]` tensors.
pub fn ssim_leads<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<Vec<f64>, MetricError> {
    (0..rows(pred, target)?).map(|i| ssim_1d(pred.row(i), target.row(i))).collect()
}

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len().max(1) as f64
}
