//! Instance and batch normalization, composed from differentiable primitives
//! so that second derivatives come for free.

use crate::error::{AutodiffError, Result};
use crate::tensor::{no_grad, Tensor};

pub const DEFAULT_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BatchNormMode {
    Train,
    Eval,
}

/// Per-channel running mean/variance for batch normalization. Empty until
/// the first train-mode forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats {
    pub momentum: f64,
    pub mean: Option<Vec<f64>>,
    pub var: Option<Vec<f64>>,
}

impl RunningStats {
    pub fn new(momentum: f64) -> Self {
        Self {
            momentum,
            mean: None,
            var: None,
        }
    }

    pub fn is_initialized(&self) -> bool {
        self.mean.is_some() && self.var.is_some()
    }

    /// `stat <- (1 - momentum) * stat + momentum * batch`, starting from
    /// mean 0 / variance 1.
    fn update(&mut self, batch_mean: &[f64], batch_var_unbiased: &[f64]) {
        let m = self.momentum;
        let c = batch_mean.len();
        let mean = self.mean.get_or_insert_with(|| vec![0.0; c]);
        for (r, &b) in mean.iter_mut().zip(batch_mean) {
            *r = (1.0 - m) * *r + m * b;
        }
        let var = self.var.get_or_insert_with(|| vec![1.0; c]);
        for (r, &b) in var.iter_mut().zip(batch_var_unbiased) {
            *r = (1.0 - m) * *r + m * b;
        }
    }
}

impl Default for RunningStats {
    fn default() -> Self {
        Self::new(0.1)
    }
}

fn check_affine(x: &Tensor, gamma: &Tensor, beta: &Tensor) -> Result<[usize; 4]> {
    let s: [usize; 4] = match *x.shape() {
        [n, c, h, w] => [n, c, h, w],
        _ => {
            return Err(AutodiffError::Shape(format!(
                "normalization input must be 4-D, got {:?}",
                x.shape()
            )))
        }
    };
    for (name, p) in [("gamma", gamma), ("beta", beta)] {
        if p.numel() != s[1] {
            return Err(AutodiffError::Shape(format!(
                "{name} has {} elements for {} channels",
                p.numel(),
                s[1]
            )));
        }
    }
    Ok(s)
}

fn affine(xhat: &Tensor, gamma: &Tensor, beta: &Tensor, shape: [usize; 4]) -> Result<Tensor> {
    let c = shape[1];
    let g = gamma.reshape(&[1, c, 1, 1])?.broadcast_to(&shape)?;
    let b = beta.reshape(&[1, c, 1, 1])?.broadcast_to(&shape)?;
    xhat.mul(&g)?.add(&b)
}

/// Normalizes over `axes` with biased variance; returns (x̂, mean, var).
fn standardize(x: &Tensor, axes: &[usize], eps: f64) -> Result<(Tensor, Tensor, Tensor)> {
    let shape = x.shape().to_vec();
    let mean = x.mean_axes(axes)?;
    let centered = x.sub(&mean.broadcast_to(&shape)?)?;
    let var = centered.square().mean_axes(axes)?;
    let inv_std = var.add_scalar(eps).powf(-0.5);
    let xhat = centered.mul(&inv_std.broadcast_to(&shape)?)?;
    Ok((xhat, mean, var))
}

/// Per-sample, per-channel normalization over the spatial axes followed by a
/// per-channel affine map.
pub fn instance_norm2d(x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<Tensor> {
    let shape = check_affine(x, gamma, beta)?;
    let (xhat, _, _) = standardize(x, &[2, 3], eps)?;
    affine(&xhat, gamma, beta, shape)
}

/// Batch normalization over (N, H, W) per channel. Train mode uses batch
/// statistics and updates `stats`; eval mode uses `stats` as constants.
pub fn batch_norm2d(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    eps: f64,
    mode: BatchNormMode,
    stats: &mut RunningStats,
) -> Result<Tensor> {
    let shape = check_affine(x, gamma, beta)?;
    let [n, c, h, w] = shape;
    match mode {
        BatchNormMode::Train => {
            let count = n * h * w;
            if count < 2 {
                return Err(AutodiffError::Dimension(format!(
                    "train-mode batch norm needs at least 2 values per channel, got {count}"
                )));
            }
            let (xhat, mean, var) = standardize(x, &[0, 2, 3], eps)?;
            let unbiased: Vec<f64> = var
                .data()
                .iter()
                .map(|v| v * count as f64 / (count - 1) as f64)
                .collect();
            stats.update(mean.data(), &unbiased);
            affine(&xhat, gamma, beta, shape)
        }
        BatchNormMode::Eval => {
            let (Some(rm), Some(rv)) = (&stats.mean, &stats.var) else {
                return Err(AutodiffError::State(
                    "eval-mode batch norm before running statistics were initialized".into(),
                ));
            };
            if rm.len() != c || rv.len() != c {
                return Err(AutodiffError::Shape(format!(
                    "running statistics hold {} channels, input has {c}",
                    rm.len()
                )));
            }
            let (mean, inv_std) = {
                let _g = no_grad();
                let inv: Vec<f64> = rv.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
                (
                    Tensor::new(rm.clone(), &[1, c, 1, 1])?.broadcast_to(&shape)?,
                    Tensor::new(inv, &[1, c, 1, 1])?.broadcast_to(&shape)?,
                )
            };
            let xhat = x.sub(&mean)?.mul(&inv_std)?;
            affine(&xhat, gamma, beta, shape)
        }
    }
}
