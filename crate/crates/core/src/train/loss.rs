use pano_autodiff::{grad, Tensor};
use rand::Rng;

use crate::error::{Error, Result};
use crate::nets::CriticModel;

/// Added under the square root of the per-sample gradient norm so its
/// derivative stays finite at a zero gradient.
pub const GP_NORM_EPS: f64 = 1e-12;

/// `eps·real + (1−eps)·fake`, with one coefficient per sample.
pub fn interpolate_samples(real: &Tensor, fake: &Tensor, eps: &Tensor) -> Result<Tensor> {
    if real.shape() != fake.shape() {
        return Err(Error::Dimension(format!(
            "real {:?} and fake {:?} batches differ in shape",
            real.shape(),
            fake.shape()
        )));
    }
    let n = real.shape()[0];
    if eps.numel() != n {
        return Err(Error::Dimension(format!("{} interpolation weights for {n} samples", eps.numel())));
    }
    if let Some(e) = eps.data().iter().find(|e| !(0.0..=1.0).contains(*e)) {
        return Err(Error::Validation(format!("interpolation weight {e} outside [0,1]")));
    }
    let mut col = vec![1; real.ndim()];
    col[0] = n;
    let e = eps.reshape(&col)?.broadcast_to(real.shape())?;
    let one_minus = eps.neg().add_scalar(1.0).reshape(&col)?.broadcast_to(real.shape())?;
    Ok(real.mul(&e)?.add(&fake.mul(&one_minus)?)?)
}

/// Per-sample uniform(0,1) interpolation weights.
pub fn sample_interpolation_weights(n: usize, rng: &mut impl Rng) -> Result<Tensor> {
    Ok(Tensor::new((0..n).map(|_| rng.random::<f64>()).collect(), &[n])?)
}

/// `λ · mean_i (‖∇D(x̂_i)‖₂ − 1)²` at the given interpolates. The result
/// stays differentiable with respect to the critic's parameters.
pub fn gradient_penalty_at(critic: &dyn CriticModel, interpolates: &Tensor, lambda: f64) -> Result<Tensor> {
    if !(lambda >= 0.0) {
        return Err(Error::Validation(format!("gradient penalty weight must be >= 0, got {lambda}")));
    }
    if lambda == 0.0 {
        return Ok(Tensor::scalar(0.0));
    }
    let x_hat = interpolates.detach().requires_grad();
    let scores = critic.score(&x_hat)?;
    let g = grad(&scores.sum(), &[&x_hat], true)?.remove(0);
    let n = g.shape()[0];
    let per_sample = g.reshape(&[n, g.numel() / n])?.square().sum_axes(&[1])?;
    let norm = per_sample.add_scalar(GP_NORM_EPS).sqrt();
    Ok(norm.add_scalar(-1.0).square().mean().scale(lambda))
}

/// Gradient penalty with interpolation weights drawn from `rng`.
pub fn gradient_penalty(
    critic: &dyn CriticModel,
    real: &Tensor,
    fake: &Tensor,
    lambda: f64,
    rng: &mut impl Rng,
) -> Result<Tensor> {
    let eps = sample_interpolation_weights(real.shape()[0], rng)?;
    gradient_penalty_at(critic, &interpolate_samples(real, fake, &eps)?, lambda)
}

/// Critic objective split into its logged parts.
#[derive(Debug, Clone)]
pub struct CriticLoss {
    /// `mean D(fake) − mean D(real) + GP`, differentiable.
    pub loss: Tensor,
    pub gp: f64,
    /// `mean D(real) − mean D(fake)`.
    pub wasserstein_estimate: f64,
}

pub fn critic_loss(
    critic: &dyn CriticModel,
    real: &Tensor,
    fake: &Tensor,
    lambda: f64,
    rng: &mut impl Rng,
) -> Result<CriticLoss> {
    let eps = sample_interpolation_weights(real.shape()[0], rng)?;
    critic_loss_at(critic, real, fake, &eps, lambda)
}

/// [`critic_loss`] with explicit interpolation weights.
pub fn critic_loss_at(
    critic: &dyn CriticModel,
    real: &Tensor,
    fake: &Tensor,
    eps: &Tensor,
    lambda: f64,
) -> Result<CriticLoss> {
    if real.shape() != fake.shape() {
        return Err(Error::Dimension(format!(
            "real {:?} and fake {:?} batches differ in shape",
            real.shape(),
            fake.shape()
        )));
    }
    let d_real = critic.score(real)?.mean();
    let d_fake = critic.score(fake)?.mean();
    let gp = gradient_penalty_at(critic, &interpolate_samples(real, fake, eps)?, lambda)?;
    let w = d_real.item()? - d_fake.item()?;
    let gp_value = gp.item()?;
    let base = d_fake.sub(&d_real)?;
    let loss = if lambda == 0.0 { base } else { base.add(&gp)? };
    Ok(CriticLoss {
        loss,
        gp: gp_value,
        wasserstein_estimate: w,
    })
}

/// `−mean(scores)`.
pub fn generator_loss(fake_scores: &Tensor) -> Result<Tensor> {
    if fake_scores.numel() == 0 {
        return Err(Error::Dimension("generator loss over an empty batch".into()));
    }
    Ok(fake_scores.mean().neg())
}
