use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use pano_core::pipeline::{
    anisotropic_diffusion, normalize_grayscale, resize_bilinear, synthetic::synthetic_dataset, ADParams, RawImage,
};
use pano_core::train::{run_training, ModelPreset, TrainingSet, CONFIG_FILE, LOG_FILE};

use crate::config::{resolve_train, DataSection, ResolvedTrain, TrainFile, TrainOverrides};
use crate::images::{create_out_dir, load_png_dir};
use crate::manifest::RunManifest;

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// TOML file with `preset` and [train], [generator], [critic], [data] tables.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// M1, M2, M3 or M4: image size, critic iterations, epochs and denoising.
    #[arg(long)]
    pub preset: Option<ModelPreset>,
    /// Stop after this many generator steps.
    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long)]
    pub epochs: Option<u64>,
    /// Critic updates per generator update.
    #[arg(long)]
    pub critic_iters: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// 32, 64, 128 or 256.
    #[arg(long)]
    pub image_size: Option<usize>,
    /// Denoise training images with anisotropic diffusion (true or false).
    #[arg(long, value_name = "BOOL")]
    pub denoise: Option<bool>,
    /// Gradient penalty weight.
    #[arg(long)]
    pub lambda_gp: Option<f64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub beta1: Option<f64>,
    #[arg(long)]
    pub beta2: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Generator steps between checkpoints; 0 keeps only the final one.
    #[arg(long)]
    pub checkpoint_interval: Option<u64>,
    /// Feature width of the first critic and last generator layer.
    #[arg(long)]
    pub base_features: Option<usize>,
    /// Latent dimension.
    #[arg(long)]
    pub noise_channels: Option<usize>,
    /// Directory of training PNGs, resized to the image size if needed.
    #[arg(long, conflicts_with = "synthetic")]
    pub data: Option<PathBuf>,
    /// Train on this many procedural images.
    #[arg(long)]
    pub synthetic: Option<usize>,
    #[arg(long)]
    pub synthetic_seed: Option<u64>,
    /// Run directory: config snapshot, log, checkpoints and run manifest.
    #[arg(long)]
    pub out: PathBuf,
}

impl TrainArgs {
    fn overrides(&self) -> TrainOverrides {
        TrainOverrides {
            preset: self.preset,
            max_steps: self.steps,
            epochs: self.epochs,
            critic_iters: self.critic_iters,
            batch_size: self.batch_size,
            image_size: self.image_size,
            denoise: self.denoise,
            lambda_gp: self.lambda_gp,
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            seed: self.seed,
            checkpoint_interval: self.checkpoint_interval,
            base_features: self.base_features,
            noise_channels: self.noise_channels,
            data: DataSection {
                dir: self.data.clone(),
                synthetic: self.synthetic,
                synthetic_seed: self.synthetic_seed,
            },
        }
    }
}

/// Loads or synthesizes the images, brings them to the training size and
/// denoises them after resizing when the configuration asks for it.
fn load_training_set(r: &ResolvedTrain) -> Result<TrainingSet> {
    let size = r.train.image_size;
    let raw: Vec<RawImage> = match (&r.data.dir, r.data.synthetic) {
        (Some(dir), _) => load_png_dir(dir)?.into_iter().map(|(_, img)| img).collect(),
        (None, Some(n)) => synthetic_dataset(n, size, r.data.synthetic_seed.unwrap_or(r.train.seed))?,
        (None, None) => unreachable!("resolve_train requires a data source"),
    };
    let ad = ADParams::default();
    let tensors = raw
        .iter()
        .map(|img| {
            let mut img = if img.width() == size && img.height() == size {
                img.clone()
            } else {
                resize_bilinear(img, size, size)?
            };
            if r.train.denoise {
                img = anisotropic_diffusion(&img, &ad)?;
            }
            normalize_grayscale(&img)
        })
        .collect::<pano_core::Result<Vec<_>>>()?;
    Ok(TrainingSet::from_tensors(&tensors)?)
}

pub fn run(args: &TrainArgs, argv: &[String]) -> Result<()> {
    let file = match &args.config {
        Some(p) => TrainFile::load(p)?,
        None => TrainFile::default(),
    };
    let resolved = resolve_train(&file, &args.overrides())?;
    let dataset = load_training_set(&resolved).context("preparing training data")?;
    create_out_dir(&args.out)?;
    log::info!(
        "training on {} images of {}x{}, critic_iters {}, batch {}",
        dataset.len(),
        dataset.size(),
        dataset.size(),
        resolved.train.critic_iters,
        resolved.train.batch_size
    );
    let outcome = run_training(
        &resolved.train,
        &dataset,
        &resolved.generator,
        &resolved.critic,
        Some(&args.out),
    )?;
    log::info!("finished after {} generator steps", outcome.log.len());

    let config = serde_json::to_value(&resolved)?;
    let mut run = RunManifest::new("train", argv, Some(resolved.train.seed), config);
    if let Some(dir) = &resolved.data.dir {
        run.add_input(dir)?;
    }
    if let Some(p) = &args.config {
        run.add_input(p)?;
    }
    run.add_output(args.out.join(CONFIG_FILE));
    run.add_output(args.out.join(LOG_FILE));
    for c in &outcome.checkpoints {
        run.add_output(c);
    }
    run.write(&args.out)?;
    Ok(())
}
