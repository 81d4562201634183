//! Generator and critic networks.
//!
//! The generator projects an `N×C_noise×1×1` latent to a 4×4 map and doubles
//! the spatial extent per stage with stride-2 transposed convolutions
//! (batch norm + ReLU on hidden stages, tanh on the output). The critic
//! mirrors it with stride-2 convolutions (instance norm + leaky ReLU) and a
//! final 4×4 convolution to one score per sample.

mod checkpoint;
mod params;

pub use checkpoint::{Checkpoint, CheckpointMeta, NamedArray, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use params::{ParameterStore, INIT_STD};

use pano_autodiff::{
    batch_norm2d, instance_norm2d, Activation, BatchNormMode, ConvParams, RunningStats, Tensor,
    DEFAULT_NORM_EPS,
};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream, Stream};
use params::normal_tensor;

pub const SUPPORTED_SIZES: [usize; 4] = [32, 64, 128, 256];
pub const DEFAULT_NOISE_CHANNELS: usize = 100;
const KERNEL: usize = 4;

fn check_size(size: usize) -> Result<usize> {
    if !SUPPORTED_SIZES.contains(&size) {
        return Err(Error::Config(format!(
            "image size {size} unsupported, expected one of {SUPPORTED_SIZES:?}"
        )));
    }
    Ok(size.trailing_zeros() as usize - 2)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub noise_channels: usize,
    pub img_channels: usize,
    pub target_size: usize,
    /// Channel count of the last hidden stage; earlier stages double it.
    pub base_features: usize,
    pub bn_momentum: f64,
    pub norm_eps: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            noise_channels: DEFAULT_NOISE_CHANNELS,
            img_channels: 1,
            target_size: 256,
            base_features: 64,
            bn_momentum: 0.1,
            norm_eps: DEFAULT_NORM_EPS,
        }
    }
}

impl GeneratorConfig {
    /// Number of stride-2 upsampling stages after the 4×4 projection.
    pub fn upsampling_stages(&self) -> Result<usize> {
        check_size(self.target_size)
    }

    pub fn validate(&self) -> Result<()> {
        self.upsampling_stages()?;
        if self.noise_channels == 0 || self.img_channels == 0 || self.base_features == 0 {
            return Err(Error::Config("generator channel counts must be positive".into()));
        }
        if !(self.bn_momentum > 0.0 && self.bn_momentum <= 1.0) || self.norm_eps <= 0.0 {
            return Err(Error::Config("generator norm momentum/eps out of range".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CriticConfig {
    pub img_channels: usize,
    pub input_size: usize,
    /// Channel count of the first stage; later stages double it.
    pub base_features: usize,
    pub leaky_slope: f64,
    /// Instance-normalize the first stage as well. Off by default so that
    /// absolute brightness reaches the critic.
    pub in_on_first_layer: bool,
    pub norm_eps: f64,
}

impl Default for CriticConfig {
    fn default() -> Self {
        Self {
            img_channels: 1,
            input_size: 256,
            base_features: 64,
            leaky_slope: 0.2,
            in_on_first_layer: false,
            norm_eps: DEFAULT_NORM_EPS,
        }
    }
}

impl CriticConfig {
    pub fn downsampling_stages(&self) -> Result<usize> {
        check_size(self.input_size)
    }

    pub fn validate(&self) -> Result<()> {
        self.downsampling_stages()?;
        if self.img_channels == 0 || self.base_features == 0 {
            return Err(Error::Config("critic channel counts must be positive".into()));
        }
        if !(self.leaky_slope > 0.0 && self.leaky_slope < 1.0) {
            return Err(Error::Config(format!(
                "leaky slope must lie in (0,1), got {}",
                self.leaky_slope
            )));
        }
        if self.norm_eps <= 0.0 {
            return Err(Error::Config("critic norm eps must be positive".into()));
        }
        Ok(())
    }
}

/// Anything that maps a batch `[N, ...]` to one score per sample, shape `[N]`.
pub trait CriticModel {
    fn score(&self, x: &Tensor) -> Result<Tensor>;
}

#[derive(Debug, Clone)]
struct Stage {
    weight: usize,
    bias: Option<usize>,
    /// (gamma, beta) parameter positions.
    norm: Option<(usize, usize)>,
    conv: ConvParams,
    activation: Option<Activation>,
}

fn add_conv(
    ps: &mut ParameterStore,
    rng: &mut impl rand::Rng,
    prefix: &str,
    kernel_shape: [usize; 4],
    with_bias: bool,
) -> Result<(usize, Option<usize>)> {
    let w = ps.add(format!("{prefix}.weight"), normal_tensor(rng, &kernel_shape, 0.0, INIT_STD)?)?;
    let b = if with_bias {
        Some(ps.add(format!("{prefix}.bias"), Tensor::zeros(&[kernel_shape[0]])?)?)
    } else {
        None
    };
    Ok((w, b))
}

fn add_norm(ps: &mut ParameterStore, prefix: &str, channels: usize) -> Result<(usize, usize)> {
    let g = ps.add(format!("{prefix}.gamma"), Tensor::ones(&[channels])?)?;
    let b = ps.add(format!("{prefix}.beta"), Tensor::zeros(&[channels])?)?;
    Ok((g, b))
}

fn add_bias(x: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let s = x.shape();
    let b = bias.reshape(&[1, s[1], 1, 1])?.broadcast_to(s)?;
    Ok(x.add(&b)?)
}

/// Generator network with its parameters and batch-norm running statistics.
#[derive(Debug, Clone)]
pub struct Generator {
    config: GeneratorConfig,
    params: ParameterStore,
    stages: Vec<Stage>,
    running: Vec<RunningStats>,
}

pub fn build_generator(config: &GeneratorConfig, seed: u64) -> Result<Generator> {
    config.validate()?;
    let k = config.upsampling_stages()?;
    let mut rng = stream(seed, Stream::GeneratorInit);
    let mut params = ParameterStore::new();
    let mut stages = Vec::with_capacity(k + 1);
    let mut running = Vec::with_capacity(k);
    let mut in_ch = config.noise_channels;
    for i in 0..=k {
        let last = i == k;
        let out_ch = if last {
            config.img_channels
        } else {
            config.base_features << (k - 1 - i)
        };
        let prefix = format!("gen.{i}");
        // transposed-conv kernels are stored [in, out, kh, kw]
        let (weight, _) = add_conv(&mut params, &mut rng, &prefix, [in_ch, out_ch, KERNEL, KERNEL], false)?;
        let bias = if last {
            Some(params.add(format!("{prefix}.bias"), Tensor::zeros(&[out_ch])?)?)
        } else {
            None
        };
        let norm = if last {
            None
        } else {
            running.push(RunningStats::new(config.bn_momentum));
            Some(add_norm(&mut params, &format!("{prefix}.bn"), out_ch)?)
        };
        stages.push(Stage {
            weight,
            bias,
            norm,
            conv: if i == 0 { ConvParams::new(1, 0) } else { ConvParams::new(2, 1) },
            activation: Some(if last { Activation::Tanh } else { Activation::Relu }),
        });
        in_ch = out_ch;
    }
    Ok(Generator {
        config: config.clone(),
        params,
        stages,
        running,
    })
}

impl Generator {
    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    pub fn params(&self) -> &ParameterStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParameterStore {
        &mut self.params
    }

    pub fn running_stats(&self) -> &[RunningStats] {
        &self.running
    }

    /// Maps `z: [N, C_noise, 1, 1]` to images `[N, C_img, S, S]` in (−1, 1).
    /// Train mode normalizes with batch statistics and updates the running
    /// estimates; eval mode requires them to exist.
    pub fn forward(&mut self, z: &Tensor, mode: BatchNormMode) -> Result<Tensor> {
        let c = self.config.noise_channels;
        if z.ndim() != 4 || z.shape()[1..] != [c, 1, 1] {
            return Err(Error::Shape(format!(
                "generator expects [N,{c},1,1] latents, got {:?}",
                z.shape()
            )));
        }
        let mut h = z.clone();
        let mut bn = 0;
        for stage in &self.stages {
            h = h.conv_transpose2d(self.params.get(stage.weight), stage.conv)?;
            if let Some(b) = stage.bias {
                h = add_bias(&h, self.params.get(b))?;
            }
            if let Some((g, b)) = stage.norm {
                h = batch_norm2d(
                    &h,
                    self.params.get(g),
                    self.params.get(b),
                    self.config.norm_eps,
                    mode,
                    &mut self.running[bn],
                )?;
                bn += 1;
            }
            if let Some(a) = stage.activation {
                h = h.activation(a)?;
            }
        }
        Ok(h)
    }

    /// Standard-normal latents `[n, C_noise, 1, 1]`.
    pub fn sample_latent(&self, n: usize, rng: &mut impl rand::Rng) -> Result<Tensor> {
        normal_tensor(rng, &[n, self.config.noise_channels, 1, 1], 0.0, 1.0)
    }

    pub(crate) fn export_arrays(&self, out: &mut Vec<NamedArray>) {
        export_store(&self.params, out);
        for (i, rs) in self.running.iter().enumerate() {
            if let (Some(m), Some(v)) = (&rs.mean, &rs.var) {
                out.push(NamedArray::from_f64(format!("gen.running.{i}.mean"), vec![m.len()], m));
                out.push(NamedArray::from_f64(format!("gen.running.{i}.var"), vec![v.len()], v));
            }
        }
    }

    pub(crate) fn import_arrays(&mut self, arrays: &[NamedArray]) -> Result<()> {
        import_store(&mut self.params, arrays)?;
        for (i, rs) in self.running.iter_mut().enumerate() {
            let find = |suffix: &str| {
                let name = format!("gen.running.{i}.{suffix}");
                arrays.iter().find(|a| a.name == name).map(NamedArray::to_f64)
            };
            rs.mean = find("mean");
            rs.var = find("var");
        }
        Ok(())
    }
}

/// Critic network.
#[derive(Debug, Clone)]
pub struct Critic {
    config: CriticConfig,
    params: ParameterStore,
    stages: Vec<Stage>,
}

pub fn build_critic(config: &CriticConfig, seed: u64) -> Result<Critic> {
    config.validate()?;
    let k = config.downsampling_stages()?;
    let mut rng = stream(seed, Stream::CriticInit);
    let mut params = ParameterStore::new();
    let mut stages = Vec::with_capacity(k + 1);
    let act = Some(Activation::LeakyRelu(config.leaky_slope));
    let mut in_ch = config.img_channels;
    for i in 0..k {
        let out_ch = config.base_features << i;
        let normed = i > 0 || config.in_on_first_layer;
        let prefix = format!("critic.{i}");
        let (weight, bias) = add_conv(&mut params, &mut rng, &prefix, [out_ch, in_ch, KERNEL, KERNEL], !normed)?;
        let norm = if normed {
            Some(add_norm(&mut params, &format!("{prefix}.in"), out_ch)?)
        } else {
            None
        };
        stages.push(Stage {
            weight,
            bias,
            norm,
            conv: ConvParams::new(2, 1),
            activation: act,
        });
        in_ch = out_ch;
    }
    let (weight, bias) = add_conv(&mut params, &mut rng, &format!("critic.{k}"), [1, in_ch, KERNEL, KERNEL], true)?;
    stages.push(Stage {
        weight,
        bias,
        norm: None,
        conv: ConvParams::new(1, 0),
        activation: None,
    });
    Ok(Critic {
        config: config.clone(),
        params,
        stages,
    })
}

impl Critic {
    pub fn config(&self) -> &CriticConfig {
        &self.config
    }

    pub fn params(&self) -> &ParameterStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParameterStore {
        &mut self.params
    }

    pub(crate) fn export_arrays(&self, out: &mut Vec<NamedArray>) {
        export_store(&self.params, out);
    }

    pub(crate) fn import_arrays(&mut self, arrays: &[NamedArray]) -> Result<()> {
        import_store(&mut self.params, arrays)
    }
}

impl CriticModel for Critic {
    fn score(&self, x: &Tensor) -> Result<Tensor> {
        let (c, s) = (self.config.img_channels, self.config.input_size);
        if x.ndim() != 4 || x.shape()[1..] != [c, s, s] {
            return Err(Error::Shape(format!(
                "critic expects [N,{c},{s},{s}] input, got {:?}",
                x.shape()
            )));
        }
        let mut h = x.clone();
        for stage in &self.stages {
            h = h.conv2d(self.params.get(stage.weight), stage.conv)?;
            if let Some(b) = stage.bias {
                h = add_bias(&h, self.params.get(b))?;
            }
            if let Some((g, b)) = stage.norm {
                h = instance_norm2d(&h, self.params.get(g), self.params.get(b), self.config.norm_eps)?;
            }
            if let Some(a) = stage.activation {
                h = h.activation(a)?;
            }
        }
        Ok(h.reshape(&[x.shape()[0]])?)
    }
}

fn export_store(ps: &ParameterStore, out: &mut Vec<NamedArray>) {
    for (name, t) in ps.iter() {
        out.push(NamedArray::from_f64(name.to_string(), t.shape().to_vec(), t.data()));
    }
}

fn import_store(ps: &mut ParameterStore, arrays: &[NamedArray]) -> Result<()> {
    for idx in 0..ps.len() {
        let name = ps.name(idx).to_string();
        let arr = arrays
            .iter()
            .find(|a| a.name == name)
            .ok_or_else(|| Error::Format(format!("checkpoint lacks parameter {name}")))?;
        if arr.shape != ps.get(idx).shape() {
            return Err(Error::Format(format!(
                "checkpoint parameter {name} has shape {:?}, network expects {:?}",
                arr.shape,
                ps.get(idx).shape()
            )));
        }
        ps.set_values(idx, arr.to_f64())?;
    }
    Ok(())
}
