use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::adam::AdamConfig;
use crate::error::{Error, Result};

/// The four model configurations compared in the evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ModelPreset {
    M1,
    M2,
    M3,
    M4,
}

impl ModelPreset {
    pub const ALL: [ModelPreset; 4] = [Self::M1, Self::M2, Self::M3, Self::M4];
}

impl fmt::Display for ModelPreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for ModelPreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "M1" => Ok(Self::M1),
            "M2" => Ok(Self::M2),
            "M3" => Ok(Self::M3),
            "M4" => Ok(Self::M4),
            _ => Err(Error::Config(format!("unknown preset {s:?}, expected M1..M4"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub image_size: usize,
    /// Critic updates per generator update.
    pub critic_iters: usize,
    pub epochs: u64,
    /// Whether the training images are anisotropic-diffusion denoised.
    pub denoise: bool,
    pub batch_size: usize,
    pub lambda_gp: f64,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Generator steps between checkpoints; 0 writes only the final one.
    pub checkpoint_interval: u64,
    /// Stops after this many generator steps even if epochs remain.
    pub max_steps: Option<u64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            image_size: 256,
            critic_iters: 5,
            epochs: 100,
            denoise: false,
            batch_size: 64,
            lambda_gp: 10.0,
            adam: AdamConfig::default(),
            seed: 0,
            checkpoint_interval: 0,
            max_steps: None,
        }
    }
}

impl TrainConfig {
    /// Image size, critic iterations, epochs and denoising of a preset;
    /// everything else keeps its default.
    pub fn preset(preset: ModelPreset) -> Self {
        let (critic_iters, epochs, denoise) = match preset {
            ModelPreset::M1 => (2, 550, false),
            ModelPreset::M2 => (1, 150, true),
            ModelPreset::M3 => (4, 250, true),
            ModelPreset::M4 => (5, 100, true),
        };
        Self {
            image_size: 256,
            critic_iters,
            epochs,
            denoise,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.critic_iters < 1 {
            return Err(Error::Config("critic_iters must be >= 1".into()));
        }
        if !(self.lambda_gp >= 0.0) {
            return Err(Error::Config(format!("lambda_gp must be >= 0, got {}", self.lambda_gp)));
        }
        if self.batch_size < 2 {
            return Err(Error::Config(format!("batch_size must be >= 2, got {}", self.batch_size)));
        }
        if self.epochs == 0 && self.max_steps.is_none() {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        self.adam.validate()
    }
}
