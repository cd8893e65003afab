//! Diagonal-Gaussian latent head.
//!
//! The preprocessor's raw output vector of even width `2m` is split in half:
//! the first `m` entries are the latent means, the second `m` entries pass
//! through `exp(tanh(u)) / 2` to become variances. That squashing bounds every
//! variance inside `[exp(-1)/2, exp(1)/2]`, so latents can never collapse to a
//! deterministic code (which would let the discriminator smuggle domain
//! information through vanishing noise) nor blow up.
//!
//! Sampling uses the reparameterization `z = mean + sqrt(var) * eps` so
//! gradients flow through both halves; the deterministic path used for
//! pseudo-rewards is the same formula with `eps = 0`.

use super::mat::Mat;
use crate::error::{Error, Result};

/// Mean and variance of a diagonal-Gaussian latent.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentRep {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// Hard bounds implied by the variance squashing: `(exp(-1)/2, exp(1)/2)`.
pub fn var_bounds() -> (f64, f64) {
    ((-1.0f64).exp() / 2.0, 1.0f64.exp() / 2.0)
}

#[inline]
fn squash_var(u: f64) -> f64 {
    (u.tanh()).exp() / 2.0
}

/// Splits an even-length raw head output into `(mean, var)`.
pub fn gaussian_head(raw: &[f64]) -> Result<LatentRep> {
    if raw.is_empty() || raw.len() % 2 != 0 {
        return Err(Error::contract(format!(
            "gaussian head needs an even, non-zero raw width, got {}",
            raw.len()
        )));
    }
    let m = raw.len() / 2;
    Ok(LatentRep {
        mean: raw[..m].to_vec(),
        var: raw[m..].iter().map(|&u| squash_var(u)).collect(),
    })
}

/// Reparameterized sample `mean + sqrt(var) * noise`.
///
/// `noise` must match the latent width; all-zero noise returns the mean
/// exactly, which is the deterministic evaluation path.
pub fn sample_latent(rep: &LatentRep, noise: &[f64]) -> Result<Vec<f64>> {
    if noise.len() != rep.mean.len() {
        return Err(Error::contract(format!(
            "noise width {} does not match latent width {}",
            noise.len(),
            rep.mean.len()
        )));
    }
    Ok(rep
        .mean
        .iter()
        .zip(&rep.var)
        .zip(noise)
        .map(|((&mu, &v), &e)| mu + v.sqrt() * e)
        .collect())
}

/// Batched head state kept for the backward pass.
pub struct HeadTrace {
    pub mean: Mat,
    pub var: Mat,
    /// tanh of the raw second half; var' = var * (1 - tanh^2).
    tanh_u: Mat,
}

/// Batched split of a `B x 2m` raw matrix.
pub fn head_forward(raw: &Mat) -> Result<HeadTrace> {
    if raw.cols() == 0 || raw.cols() % 2 != 0 {
        return Err(Error::contract(format!(
            "gaussian head needs an even, non-zero raw width, got {}",
            raw.cols()
        )));
    }
    let m = raw.cols() / 2;
    let b = raw.rows();
    let mut mean = Mat::zeros(b, m);
    let mut var = Mat::zeros(b, m);
    let mut tanh_u = Mat::zeros(b, m);
    for i in 0..b {
        let r = raw.row(i);
        mean.row_mut(i).copy_from_slice(&r[..m]);
        for j in 0..m {
            let t = r[m + j].tanh();
            tanh_u.row_mut(i)[j] = t;
            var.row_mut(i)[j] = t.exp() / 2.0;
        }
    }
    Ok(HeadTrace { mean, var, tanh_u })
}

/// Batched reparameterized samples; `noise` is `B x m`.
pub fn sample_forward(head: &HeadTrace, noise: &Mat) -> Mat {
    let b = head.mean.rows();
    let m = head.mean.cols();
    debug_assert_eq!(noise.rows(), b);
    debug_assert_eq!(noise.cols(), m);
    let mut z = Mat::zeros(b, m);
    for i in 0..b {
        let mu = head.mean.row(i);
        let v = head.var.row(i);
        let e = noise.row(i);
        let zr = z.row_mut(i);
        for j in 0..m {
            zr[j] = mu[j] + v[j].sqrt() * e[j];
        }
    }
    z
}

/// Folds `dL/dz` back into `(dL/dmean, dL/dvar)` through the sample.
pub fn sample_backward(head: &HeadTrace, noise: &Mat, dz: &Mat) -> (Mat, Mat) {
    let b = head.mean.rows();
    let m = head.mean.cols();
    let mut d_mean = Mat::zeros(b, m);
    let mut d_var = Mat::zeros(b, m);
    for i in 0..b {
        let v = head.var.row(i);
        let e = noise.row(i);
        let d = dz.row(i);
        let dm = d_mean.row_mut(i);
        for j in 0..m {
            dm[j] = d[j];
        }
        let dv = d_var.row_mut(i);
        for j in 0..m {
            // dz/dvar = eps / (2 sqrt(var)); var is bounded away from zero.
            dv[j] = d[j] * e[j] / (2.0 * v[j].sqrt());
        }
    }
    (d_mean, d_var)
}

/// Folds `(dL/dmean, dL/dvar)` back into the raw head output gradient.
pub fn head_backward(head: &HeadTrace, d_mean: &Mat, d_var: &Mat) -> Mat {
    let b = head.mean.rows();
    let m = head.mean.cols();
    let mut d_raw = Mat::zeros(b, 2 * m);
    for i in 0..b {
        let dr = d_raw.row_mut(i);
        dr[..m].copy_from_slice(d_mean.row(i));
        let v = head.var.row(i);
        let t = head.tanh_u.row(i);
        let dv = d_var.row(i);
        for j in 0..m {
            // d var / d u = var * (1 - tanh(u)^2)
            dr[m + j] = dv[j] * v[j] * (1.0 - t[j] * t[j]);
        }
    }
    d_raw
}
