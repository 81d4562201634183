//! Scalar WGAN-GP used to check the critic's Wasserstein estimate against
//! the exact 1-D distance.

use pano_autodiff::{grad, no_grad, ConvParams, Tensor};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamConfig, OptimizerState};
use super::loss::{critic_loss, generator_loss};
use super::wasserstein::wasserstein1d_exact;
use crate::error::{Error, Result};
use crate::nets::{CriticModel, ParameterStore};
use crate::rng::{stream, Stream};

/// Fully connected leaky-ReLU network from `[N]` to `[N]`, built from 1×1
/// convolutions over `[N, features, 1, 1]`.
#[derive(Debug, Clone)]
pub struct ScalarMlp {
    params: ParameterStore,
    layers: Vec<(usize, usize)>,
    slope: f64,
}

impl ScalarMlp {
    /// He-scaled normal weights, zero biases except `output_bias` on the last layer.
    pub fn new(widths: &[usize], slope: f64, output_bias: f64, rng: &mut impl Rng) -> Result<Self> {
        if widths.len() < 2 || widths[0] != 1 || widths[widths.len() - 1] != 1 {
            return Err(Error::Config(format!("scalar MLP widths must start and end with 1, got {widths:?}")));
        }
        let mut params = ParameterStore::new();
        let mut layers = Vec::new();
        for (i, pair) in widths.windows(2).enumerate() {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let std = (2.0 / fan_in as f64).sqrt();
            let w: Vec<f64> = (0..fan_in * fan_out)
                .map(|_| {
                    let v: f64 = StandardNormal.sample(rng);
                    std * v
                })
                .collect();
            let last = i + 2 == widths.len();
            let b = vec![if last { output_bias } else { 0.0 }; fan_out];
            let wi = params.add(format!("mlp.{i}.weight"), Tensor::new(w, &[fan_out, fan_in, 1, 1])?)?;
            let bi = params.add(format!("mlp.{i}.bias"), Tensor::new(b, &[fan_out])?)?;
            layers.push((wi, bi));
        }
        Ok(Self { params, layers, slope })
    }

    pub fn params(&self) -> &ParameterStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParameterStore {
        &mut self.params
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let n = x.shape()[0];
        if x.numel() != n {
            return Err(Error::Shape(format!("scalar MLP expects one value per sample, got {:?}", x.shape())));
        }
        let mut h = x.reshape(&[n, 1, 1, 1])?;
        for (i, &(w, b)) in self.layers.iter().enumerate() {
            h = h.conv2d(self.params.get(w), ConvParams::default())?;
            let c = h.shape()[1];
            h = h.add(&self.params.get(b).reshape(&[1, c, 1, 1])?.broadcast_to(h.shape())?)?;
            if i + 1 < self.layers.len() {
                h = h.leaky_relu(self.slope);
            }
        }
        Ok(h.reshape(&[n])?)
    }
}

impl CriticModel for ScalarMlp {
    fn score(&self, x: &Tensor) -> Result<Tensor> {
        self.forward(x)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CalibrationConfig {
    pub seed: u64,
    pub hidden: usize,
    pub batch_size: usize,
    pub critic_iters: usize,
    pub lambda_gp: f64,
    pub generator_steps: usize,
    /// Critic-only updates against the frozen generator before evaluating.
    pub refine_steps: usize,
    /// Initial output offset of the generator, i.e. how far from N(0,1) it starts.
    pub generator_offset: f64,
    pub critic_adam: AdamConfig,
    pub generator_adam: AdamConfig,
    pub eval_samples: usize,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            hidden: 32,
            batch_size: 256,
            critic_iters: 5,
            lambda_gp: 10.0,
            generator_steps: 300,
            refine_steps: 500,
            generator_offset: 4.0,
            critic_adam: AdamConfig {
                lr: 1e-3,
                beta1: 0.5,
                beta2: 0.9,
                eps: 1e-8,
            },
            generator_adam: AdamConfig {
                lr: 1e-4,
                beta1: 0.5,
                beta2: 0.9,
                eps: 1e-8,
            },
            eval_samples: 10_000,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CalibrationReport {
    /// `mean D(real) − mean D(generated)` on the evaluation samples.
    pub critic_estimate: f64,
    pub exact_w1: f64,
    pub relative_error: f64,
    /// Exact W₁ between real and generated samples before training.
    pub initial_w1: f64,
}

fn normals(n: usize, rng: &mut impl Rng) -> Result<Tensor> {
    Ok(Tensor::new((0..n).map(|_| StandardNormal.sample(rng)).collect(), &[n])?)
}

/// Trains a scalar generator against N(0,1) with WGAN-GP, then refines the
/// critic with the generator frozen and compares its estimate with the exact
/// distance on fresh samples.
pub fn run_scalar_calibration(cfg: &CalibrationConfig) -> Result<CalibrationReport> {
    cfg.critic_adam.validate()?;
    cfg.generator_adam.validate()?;
    let mut init = stream(cfg.seed, Stream::GeneratorInit);
    let widths = [1, cfg.hidden, cfg.hidden, 1];
    let mut gen = ScalarMlp::new(&widths, 0.2, cfg.generator_offset, &mut init)?;
    let mut critic = ScalarMlp::new(&widths, 0.2, 0.0, &mut stream(cfg.seed, Stream::CriticInit))?;
    let mut data_rng = stream(cfg.seed, Stream::Shuffle);
    let mut z_rng = stream(cfg.seed, Stream::Latent);
    let mut eps_rng = stream(cfg.seed, Stream::Interpolation);
    let mut g_opt = OptimizerState::new(gen.params());
    let mut d_opt = OptimizerState::new(critic.params());
    let bs = cfg.batch_size;

    let eval = |gen: &ScalarMlp, critic: &ScalarMlp, rng_seed: u64| -> Result<(f64, f64)> {
        let _off = no_grad();
        let mut rng = stream(rng_seed, Stream::Noise);
        let real = normals(cfg.eval_samples, &mut rng)?;
        let fake = gen.forward(&normals(cfg.eval_samples, &mut rng)?)?;
        let est = critic.score(&real)?.mean().item()? - critic.score(&fake)?.mean().item()?;
        Ok((est, wasserstein1d_exact(real.data(), fake.data())?))
    };
    let (_, initial_w1) = eval(&gen, &critic, cfg.seed ^ 0x5eed)?;

    let mut critic_update = |gen: &ScalarMlp, critic: &mut ScalarMlp, z_rng: &mut ChaCha8Rng, step: u64| -> Result<()> {
        let real = normals(bs, &mut data_rng)?;
        let fake = {
            let _off = no_grad();
            gen.forward(&normals(bs, z_rng)?)?
        };
        let cl = critic_loss(critic, &real, &fake, cfg.lambda_gp, &mut eps_rng)?;
        if !cl.loss.item()?.is_finite() {
            return Err(Error::NonFinite { step, what: "critic loss".into() });
        }
        let grads = grad(&cl.loss, &critic.params().tensors(), false)?;
        adam_step(critic.params_mut(), &grads, &mut d_opt, &cfg.critic_adam)
    };

    for step in 0..cfg.generator_steps as u64 {
        for _ in 0..cfg.critic_iters {
            critic_update(&gen, &mut critic, &mut z_rng, step)?;
        }
        let fake = gen.forward(&normals(bs, &mut z_rng)?)?;
        let loss = generator_loss(&critic.score(&fake)?)?;
        let g_params: Vec<Tensor> = gen.params().tensors().into_iter().cloned().collect();
        let refs: Vec<&Tensor> = g_params.iter().collect();
        let grads = grad(&loss, &refs, false)?;
        adam_step(gen.params_mut(), &grads, &mut g_opt, &cfg.generator_adam)?;
    }
    for step in 0..cfg.refine_steps as u64 {
        critic_update(&gen, &mut critic, &mut z_rng, step)?;
    }
    let (critic_estimate, exact_w1) = eval(&gen, &critic, cfg.seed ^ 0xca1)?;
    Ok(CalibrationReport {
        critic_estimate,
        exact_w1,
        relative_error: (critic_estimate - exact_w1).abs() / exact_w1,
        initial_w1,
    })
}
