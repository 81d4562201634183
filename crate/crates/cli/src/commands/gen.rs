use std::path::PathBuf;

use anyhow::Result;
use clap::Args;
use pano_autodiff::{no_grad, BatchNormMode};
use pano_core::nets::Checkpoint;
use pano_core::pipeline::denormalize;
use pano_core::rng::{stream, Stream};

use crate::error::UsageError;
use crate::images::create_out_dir;
use crate::manifest::RunManifest;

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Checkpoint written by `train`.
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value_t = 25)]
    pub count: usize,
    /// Seed of the latent vectors.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Images per forward pass; does not affect the output.
    #[arg(long, default_value_t = 16)]
    pub batch_size: usize,
    /// Output directory for gen_NNNNN.png and the run manifest.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(args: &GenArgs, argv: &[String]) -> Result<()> {
    if args.count == 0 || args.batch_size == 0 {
        return Err(UsageError("--count and --batch-size must be positive".into()).into());
    }
    let ckpt = Checkpoint::load(&args.checkpoint)?;
    let (mut generator, _) = ckpt.restore()?;
    create_out_dir(&args.out)?;
    // all latents come from one stream up front, so batching cannot change them
    let z = generator.sample_latent(args.count, &mut stream(args.seed, Stream::Latent))?;
    let mut run = RunManifest::new(
        "gen",
        argv,
        Some(args.seed),
        serde_json::json!({
            "count": args.count,
            "generator": ckpt.meta.generator,
            "checkpoint_step": ckpt.meta.step,
        }),
    );
    run.add_input(&args.checkpoint)?;
    let _off = no_grad();
    let mut index = 0;
    for start in (0..args.count).step_by(args.batch_size) {
        let n = args.batch_size.min(args.count - start);
        let images = generator.forward(&z.narrow_batch(start, n)?, BatchNormMode::Eval)?;
        let single = images.shape()[1..].to_vec();
        for i in 0..n {
            let one = images.narrow_batch(i, 1)?.reshape(&single)?;
            let path = args.out.join(format!("gen_{index:05}.png"));
            denormalize(&one)?.save(&path)?;
            run.add_output(path);
            index += 1;
        }
    }
    log::info!("wrote {index} images to {}", args.out.display());
    run.write(&args.out)?;
    Ok(())
}
