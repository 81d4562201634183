use std::fmt::Write as _;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use pano_core::metrics::{extract_features, tsne_embed, write_embedding_csv, Extractor, FeatureSet, Source, TsneConfig};
use pano_core::pipeline::RawImage;

use crate::error::UsageError;
use crate::images::{create_out_dir, load_png_dir, named_arg};
use crate::manifest::RunManifest;

#[derive(Debug, Args)]
pub struct TsneArgs {
    /// Feature CSV as LABEL=CSV (repeatable).
    #[arg(long = "features", value_name = "LABEL=CSV")]
    pub features: Vec<String>,
    /// Image directory as LABEL=DIR (repeatable), embedded with --extractor.
    #[arg(long = "images", value_name = "LABEL=DIR")]
    pub images: Vec<String>,
    /// pixel, random_conv[:SEED] or external:PATH.
    #[arg(long, default_value = "random_conv:0")]
    pub extractor: String,
    #[arg(long, default_value_t = 30.0)]
    pub perplexity: f64,
    #[arg(long, default_value_t = 1000)]
    pub iterations: usize,
    #[arg(long, default_value_t = 200.0)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = 12.0)]
    pub exaggeration: f64,
    #[arg(long, default_value_t = 250)]
    pub exaggeration_iters: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory for embedding.csv, kl.csv and the run manifest.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(args: &TsneArgs, argv: &[String]) -> Result<()> {
    if args.features.is_empty() && args.images.is_empty() {
        return Err(UsageError("give at least one --features or --images set".into()).into());
    }
    let cfg = TsneConfig {
        perplexity: args.perplexity,
        iterations: args.iterations,
        learning_rate: args.learning_rate,
        exaggeration: args.exaggeration,
        exaggeration_iters: args.exaggeration_iters,
        momentum_switch: args.exaggeration_iters,
        seed: args.seed,
        ..TsneConfig::default()
    };
    let mut run = RunManifest::new("tsne", argv, Some(args.seed), serde_json::to_value(&cfg)?);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut ids = Vec::new();
    let mut labels = Vec::new();
    let mut descriptor: Option<String> = None;
    let mut push = |label: &str, set: FeatureSet, set_ids: Vec<String>| -> Result<()> {
        match &descriptor {
            Some(d) if d != set.descriptor() => {
                return Err(pano_core::Error::Config(format!(
                    "extractor mismatch: '{d}' vs '{}' for {label}",
                    set.descriptor()
                ))
                .into())
            }
            Some(_) => {}
            None => descriptor = Some(set.descriptor().to_string()),
        }
        for (i, id) in set_ids.into_iter().enumerate() {
            rows.push(set.row(i));
            ids.push(id);
            labels.push(label.to_string());
        }
        Ok(())
    };
    for spec in &args.features {
        let (label, path) = named_arg(spec)?;
        let path = PathBuf::from(path);
        run.add_input(&path)?;
        let (set, set_ids) = FeatureSet::read_csv(&path)?;
        push(&label, set, set_ids)?;
    }
    if !args.images.is_empty() {
        let extractor: Extractor = args.extractor.parse()?;
        for spec in &args.images {
            let (label, dir) = named_arg(spec)?;
            let dir = PathBuf::from(dir);
            run.add_input(&dir)?;
            let (set_ids, imgs): (Vec<String>, Vec<RawImage>) = load_png_dir(&dir)?.into_iter().unzip();
            let set = extract_features(&imgs, &extractor, Source::R).with_context(|| format!("features of {label}"))?;
            push(&label, set, set_ids)?;
        }
    }
    let descriptor = descriptor.expect("at least one set");
    let all = FeatureSet::from_rows(&rows, Source::R, descriptor.clone())?;
    let result = tsne_embed(&all, &cfg)?;

    create_out_dir(&args.out)?;
    let emb_path = args.out.join("embedding.csv");
    write_embedding_csv(&emb_path, &ids, &labels, &result.embedding)?;
    let kl_path = args.out.join("kl.csv");
    let mut kl = String::from("iteration,kl\n");
    for (it, v) in &result.kl_log {
        writeln!(kl, "{it},{v:?}")?;
    }
    std::fs::write(&kl_path, kl).with_context(|| format!("writing {}", kl_path.display()))?;
    if let (Some(first), Some(last)) = (result.first_post_exaggeration_kl(), result.final_kl()) {
        log::info!("KL after exaggeration {first:.4}, final {last:.4}");
    }
    run.config["extractor"] = serde_json::Value::String(descriptor);
    run.add_output(&emb_path);
    run.add_output(&kl_path);
    run.write(&args.out)?;
    Ok(())
}
