//! Row-wise kernels with their hand-derived backward passes.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::{FRAC_1_SQRT_2, PI};

use super::LAYER_NORM_EPS;

pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x * FRAC_1_SQRT_2))
}

/// d/dx of exact GELU: `Φ(x) + x·φ(x)`.
pub(crate) fn gelu_grad(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x * FRAC_1_SQRT_2));
    let pdf = (-0.5 * x * x).exp() / (2.0 * PI).sqrt();
    cdf + x * pdf
}

/// Per-row statistics kept for the backward pass.
#[derive(Debug, Clone)]
pub(crate) struct NormStats {
    pub mean: Vec<f64>,
    pub rstd: Vec<f64>,
}

pub(crate) fn layer_norm(x: &[f64], rows: usize, d: usize, gain: &[f64], bias: &[f64], y: &mut [f64]) -> NormStats {
    let mut mean = vec![0.0; rows];
    let mut rstd = vec![0.0; rows];
    for r in 0..rows {
        let row = &x[r * d..(r + 1) * d];
        let m = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / d as f64;
        let s = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        let out = &mut y[r * d..(r + 1) * d];
        for i in 0..d {
            out[i] = (row[i] - m) * s * gain[i] + bias[i];
        }
        mean[r] = m;
        rstd[r] = s;
    }
    NormStats { mean, rstd }
}

/// Accumulates `dgain`, `dbias` and adds the input gradient into `dx`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn layer_norm_backward(
    dy: &[f64],
    x: &[f64],
    stats: &NormStats,
    rows: usize,
    d: usize,
    gain: &[f64],
    dgain: &mut [f64],
    dbias: &mut [f64],
    dx: &mut [f64],
) {
    let mut dxhat = vec![0.0; d];
    for r in 0..rows {
        let (m, s) = (stats.mean[r], stats.rstd[r]);
        let xr = &x[r * d..(r + 1) * d];
        let dyr = &dy[r * d..(r + 1) * d];
        let mut mean_dxhat = 0.0;
        let mut mean_dxhat_xhat = 0.0;
        for i in 0..d {
            let xhat = (xr[i] - m) * s;
            dgain[i] += dyr[i] * xhat;
            dbias[i] += dyr[i];
            dxhat[i] = dyr[i] * gain[i];
            mean_dxhat += dxhat[i];
            mean_dxhat_xhat += dxhat[i] * xhat;
        }
        mean_dxhat /= d as f64;
        mean_dxhat_xhat /= d as f64;
        let dxr = &mut dx[r * d..(r + 1) * d];
        for i in 0..d {
            let xhat = (xr[i] - m) * s;
            dxr[i] += s * (dxhat[i] - mean_dxhat - xhat * mean_dxhat_xhat);
        }
    }
}

/// Unfolds `x[t_in × c]` into kernel-3, padding-1 patches `[t_out × 3c]`
/// with column index `channel·3 + tap`, matching a `[out, in, 3]` weight.
pub(crate) fn im2col(x: &[f64], t_in: usize, c: usize, stride: usize) -> (Vec<f64>, usize) {
    let t_out = (t_in - 1) / stride + 1;
    let mut col = vec![0.0; t_out * c * 3];
    for t in 0..t_out {
        let row = &mut col[t * c * 3..(t + 1) * c * 3];
        for k in 0..3 {
            let src = (t * stride + k) as isize - 1;
            if src < 0 || src as usize >= t_in {
                continue;
            }
            let xs = &x[src as usize * c..(src as usize + 1) * c];
            for (ch, v) in xs.iter().enumerate() {
                row[ch * 3 + k] = *v;
            }
        }
    }
    (col, t_out)
}

/// Adjoint of [`im2col`]: scatters patch gradients back onto `dx[t_in × c]`.
pub(crate) fn col2im(dcol: &[f64], t_in: usize, c: usize, stride: usize, dx: &mut [f64]) {
    let t_out = (t_in - 1) / stride + 1;
    for t in 0..t_out {
        let row = &dcol[t * c * 3..(t + 1) * c * 3];
        for k in 0..3 {
            let src = (t * stride + k) as isize - 1;
            if src < 0 || src as usize >= t_in {
                continue;
            }
            let dxs = &mut dx[src as usize * c..(src as usize + 1) * c];
            for (ch, g) in dxs.iter_mut().enumerate() {
                *g += row[ch * 3 + k];
            }
        }
    }
}

/// In-place numerically stable softmax over each row of `x[rows × n]`.
pub(crate) fn softmax_rows(x: &mut [f64], rows: usize, n: usize) {
    for r in 0..rows {
        let row = &mut x[r * n..(r + 1) * n];
        let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        let inv = 1.0 / sum;
        row.iter_mut().for_each(|v| *v *= inv);
    }
}
