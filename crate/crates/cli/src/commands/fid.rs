use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use pano_core::metrics::{extract_features, fid_report, Extractor, FeatureSet, Source};
use pano_core::pipeline::{gaussian_noise_image, RawImage};

use crate::error::UsageError;
use crate::images::{create_out_dir, load_png_dir, named_arg};
use crate::manifest::RunManifest;

#[derive(Debug, Args)]
pub struct FidArgs {
    /// Directory of real reference images.
    #[arg(long, required_unless_present = "reference_features", conflicts_with = "reference_features")]
    pub reference: Option<PathBuf>,
    /// Feature CSV of the reference set.
    #[arg(long)]
    pub reference_features: Option<PathBuf>,
    /// Generated images to score, as NAME=DIR (repeatable).
    #[arg(long = "candidate", value_name = "NAME=DIR")]
    pub candidates: Vec<String>,
    /// Real images to score against the reference, as NAME=DIR (repeatable).
    #[arg(long = "real-candidate", value_name = "NAME=DIR")]
    pub real_candidates: Vec<String>,
    /// Pre-extracted candidate features, as NAME=CSV (repeatable).
    #[arg(long = "candidate-features", value_name = "NAME=CSV")]
    pub candidate_features: Vec<String>,
    /// Add this many Gaussian-noise images at the reference size.
    #[arg(long, default_value_t = 0)]
    pub noise: usize,
    #[arg(long, default_value_t = 128.0)]
    pub noise_mu: f64,
    #[arg(long, default_value_t = 64.0)]
    pub noise_sigma: f64,
    /// pixel, random_conv[:SEED] or external:PATH.
    #[arg(long, default_value = "random_conv:0")]
    pub extractor: String,
    /// Seed of the noise images.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also write the extracted features as CSV files.
    #[arg(long)]
    pub save_features: bool,
    /// Output directory for fid.csv and the run manifest.
    #[arg(long)]
    pub out: PathBuf,
}

struct Named {
    name: String,
    ids: Vec<String>,
    features: FeatureSet,
}

fn from_images(name: &str, images: Vec<(String, RawImage)>, extractor: &Extractor, source: Source) -> Result<Named> {
    let (ids, imgs): (Vec<String>, Vec<RawImage>) = images.into_iter().unzip();
    let features = extract_features(&imgs, extractor, source).with_context(|| format!("features of {name}"))?;
    Ok(Named {
        name: name.to_string(),
        ids,
        features,
    })
}

fn from_csv(name: &str, path: &Path, source: Source) -> Result<Named> {
    let (set, ids) = FeatureSet::read_csv(path)?;
    let features = FeatureSet::new(set.matrix().clone(), source, set.descriptor())?;
    Ok(Named {
        name: name.to_string(),
        ids,
        features,
    })
}

pub fn run(args: &FidArgs, argv: &[String]) -> Result<()> {
    let extractor: Extractor = args.extractor.parse()?;
    if args.candidates.is_empty()
        && args.real_candidates.is_empty()
        && args.candidate_features.is_empty()
        && args.noise == 0
    {
        return Err(UsageError("nothing to score: give --candidate, --real-candidate, --candidate-features or --noise".into()).into());
    }
    let mut run = RunManifest::new("fid", argv, Some(args.seed), serde_json::Value::Null);

    let mut reference_size = None;
    let reference = match (&args.reference, &args.reference_features) {
        (Some(dir), _) => {
            run.add_input(dir)?;
            let images = load_png_dir(dir)?;
            reference_size = Some((images[0].1.width(), images[0].1.height()));
            from_images("reference", images, &extractor, Source::R)?
        }
        (None, Some(p)) => {
            run.add_input(p)?;
            from_csv("reference", p, Source::R)?
        }
        (None, None) => unreachable!("clap requires a reference"),
    };

    let mut candidates = Vec::new();
    for (specs, source) in [(&args.real_candidates, Source::R), (&args.candidates, Source::F)] {
        for spec in specs {
            let (name, dir) = named_arg(spec)?;
            let dir = PathBuf::from(dir);
            run.add_input(&dir)?;
            candidates.push(from_images(&name, load_png_dir(&dir)?, &extractor, source)?);
        }
    }
    for spec in &args.candidate_features {
        let (name, path) = named_arg(spec)?;
        let path = PathBuf::from(path);
        run.add_input(&path)?;
        candidates.push(from_csv(&name, &path, Source::F)?);
    }
    if args.noise > 0 {
        let (w, h) = reference_size
            .ok_or_else(|| UsageError("--noise needs --reference images to know the image size".into()))?;
        let images = (0..args.noise)
            .map(|i| {
                let img = gaussian_noise_image(w, h, args.noise_mu, args.noise_sigma, args.seed.wrapping_add(i as u64))?;
                Ok((format!("noise_{i:05}"), img))
            })
            .collect::<Result<Vec<_>>>()?;
        candidates.push(from_images("noise", images, &extractor, Source::G)?);
    }
    let mut names: Vec<&str> = candidates.iter().map(|c| c.name.as_str()).collect();
    names.sort_unstable();
    if let Some(w) = names.windows(2).find(|w| w[0] == w[1]) {
        return Err(UsageError(format!("candidate name '{}' used twice", w[0])).into());
    }

    let sets: Vec<FeatureSet> = candidates.iter().map(|c| c.features.clone()).collect();
    let rows = fid_report(&reference.features, &sets)?;

    create_out_dir(&args.out)?;
    let mut csv = String::from("name,data,reference,fid\n");
    for (c, r) in candidates.iter().zip(&rows) {
        writeln!(csv, "{},{},{},{:.4}", c.name, r.data, r.reference, r.fid)?;
        println!("{:<16} {:>6} vs {:<6} FID {:.4}", c.name, r.data, r.reference, r.fid);
    }
    let fid_path = args.out.join("fid.csv");
    std::fs::write(&fid_path, csv).with_context(|| format!("writing {}", fid_path.display()))?;
    run.add_output(&fid_path);
    if args.save_features {
        for n in std::iter::once(&reference).chain(&candidates) {
            let path = args.out.join(format!("features_{}.csv", n.name));
            n.features.write_csv(&path, &n.ids)?;
            run.add_output(path);
        }
    }
    run.config = serde_json::json!({
        "extractor": reference.features.descriptor(),
        "noise": {"count": args.noise, "mu": args.noise_mu, "sigma": args.noise_sigma},
        "reference": reference.features.label(),
        "candidates": candidates.iter().map(|c| (c.name.clone(), c.features.label())).collect::<Vec<_>>(),
    });
    run.write(&args.out)?;
    Ok(())
}
