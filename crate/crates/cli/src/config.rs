//! Training configuration files and their resolution.
//!
//! A TOML file may hold `preset = "M2"` and the tables `[train]`,
//! `[generator]`, `[critic]` and `[data]`. Values are layered as
//! defaults, then the preset, then the file, then command-line flags.
//! Network sizes follow `train.image_size` unless set explicitly.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use pano_core::nets::{CriticConfig, GeneratorConfig};
use pano_core::train::{ModelPreset, TrainConfig};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::UsageError;

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainFile {
    pub preset: Option<String>,
    pub train: Option<toml::Table>,
    pub generator: Option<toml::Table>,
    pub critic: Option<toml::Table>,
    pub data: Option<DataSection>,
}

impl TrainFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }
}

/// Where training images come from: a directory of PNGs or the procedural
/// generator.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub dir: Option<PathBuf>,
    pub synthetic: Option<usize>,
    /// Seed of the procedural images; defaults to the training seed.
    pub synthetic_seed: Option<u64>,
}

/// Command-line values that override the file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainOverrides {
    pub preset: Option<ModelPreset>,
    pub max_steps: Option<u64>,
    pub epochs: Option<u64>,
    pub critic_iters: Option<usize>,
    pub batch_size: Option<usize>,
    pub image_size: Option<usize>,
    pub denoise: Option<bool>,
    pub lambda_gp: Option<f64>,
    pub lr: Option<f64>,
    pub beta1: Option<f64>,
    pub beta2: Option<f64>,
    pub seed: Option<u64>,
    pub checkpoint_interval: Option<u64>,
    pub base_features: Option<usize>,
    pub noise_channels: Option<usize>,
    pub data: DataSection,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResolvedTrain {
    pub preset: Option<ModelPreset>,
    pub train: TrainConfig,
    pub generator: GeneratorConfig,
    pub critic: CriticConfig,
    pub data: DataSection,
}

/// Deep-merges `overlay` into `base`: nested tables merge key by key, any
/// other value replaces.
pub fn merge_tables(base: &mut toml::Table, overlay: &toml::Table) {
    for (k, v) in overlay {
        match (base.get_mut(k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge_tables(b, o),
            _ => {
                base.insert(k.clone(), v.clone());
            }
        }
    }
}

fn layered<T: Clone + Serialize + DeserializeOwned>(base: &T, overlay: Option<&toml::Table>, what: &str) -> Result<T> {
    let Some(overlay) = overlay else {
        return Ok(base.clone());
    };
    let mut table = toml::Table::try_from(base).with_context(|| format!("serializing {what} defaults"))?;
    merge_tables(&mut table, overlay);
    table
        .try_into()
        .map_err(|e: toml::de::Error| UsageError(format!("[{what}] section: {}", e.message())).into())
}

pub fn resolve_train(file: &TrainFile, flags: &TrainOverrides) -> Result<ResolvedTrain> {
    let preset = match (flags.preset, &file.preset) {
        (Some(p), _) => Some(p),
        (None, Some(s)) => Some(s.parse::<ModelPreset>()?),
        (None, None) => None,
    };
    let base = preset.map_or_else(TrainConfig::default, TrainConfig::preset);
    let mut train = layered(&base, file.train.as_ref(), "train")?;
    let f = flags;
    macro_rules! set {
        ($field:expr, $flag:expr) => {
            if let Some(v) = $flag {
                $field = v;
            }
        };
    }
    set!(train.epochs, f.epochs);
    set!(train.critic_iters, f.critic_iters);
    set!(train.batch_size, f.batch_size);
    set!(train.image_size, f.image_size);
    set!(train.denoise, f.denoise);
    set!(train.lambda_gp, f.lambda_gp);
    set!(train.adam.lr, f.lr);
    set!(train.adam.beta1, f.beta1);
    set!(train.adam.beta2, f.beta2);
    set!(train.seed, f.seed);
    set!(train.checkpoint_interval, f.checkpoint_interval);
    if f.max_steps.is_some() {
        train.max_steps = f.max_steps;
    }

    let gen_base = GeneratorConfig {
        target_size: train.image_size,
        ..GeneratorConfig::default()
    };
    let mut generator = layered(&gen_base, file.generator.as_ref(), "generator")?;
    let critic_base = CriticConfig {
        input_size: train.image_size,
        ..CriticConfig::default()
    };
    let mut critic = layered(&critic_base, file.critic.as_ref(), "critic")?;
    set!(generator.base_features, f.base_features);
    set!(critic.base_features, f.base_features);
    set!(generator.noise_channels, f.noise_channels);

    let mut data = file.data.clone().unwrap_or_default();
    if f.data.dir.is_some() || f.data.synthetic.is_some() {
        data.dir = f.data.dir.clone();
        data.synthetic = f.data.synthetic;
    }
    if f.data.synthetic_seed.is_some() {
        data.synthetic_seed = f.data.synthetic_seed;
    }
    match (&data.dir, data.synthetic) {
        (Some(_), Some(_)) => return Err(UsageError("give either a data directory or --synthetic, not both".into()).into()),
        (None, None) => return Err(UsageError("no training data: pass --data DIR or --synthetic N".into()).into()),
        _ => {}
    }

    train.validate()?;
    generator.validate()?;
    critic.validate()?;
    Ok(ResolvedTrain {
        preset,
        train,
        generator,
        critic,
        data,
    })
}
