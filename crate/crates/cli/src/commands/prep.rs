use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use pano_core::pipeline::{
    build_manifest, preprocess, read_exclude_list, synthetic::synthetic_dataset, Conductance, CropSpec,
    PreprocConfig, RawImage,
};

use crate::images::create_out_dir;
use crate::manifest::RunManifest;

#[derive(Debug, Args)]
pub struct PrepArgs {
    /// Directory of source PNG radiographs.
    #[arg(long, required_unless_present = "synthetic", conflicts_with = "synthetic")]
    pub input: Option<PathBuf>,
    /// Generate this many procedural source images instead of reading --input.
    #[arg(long)]
    pub synthetic: Option<usize>,
    /// Side length of procedural source images.
    #[arg(long, default_value_t = 512)]
    pub synthetic_size: usize,
    /// Seed of the procedural images.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// File of image ids to exclude, one per line.
    #[arg(long)]
    pub exclude: Option<PathBuf>,
    /// TOML file with preprocessing settings (crop, output size, denoise).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output side length in pixels.
    #[arg(long)]
    pub size: Option<usize>,
    /// Crop width as a fraction of the source width.
    #[arg(long)]
    pub crop_width: Option<f64>,
    /// Crop height as a fraction of the source height.
    #[arg(long)]
    pub crop_height: Option<f64>,
    /// Gap below the crop as a fraction of the source height.
    #[arg(long)]
    pub crop_margin: Option<f64>,
    /// Apply anisotropic diffusion after resizing.
    #[arg(long)]
    pub denoise: bool,
    #[arg(long)]
    pub ad_iterations: Option<usize>,
    #[arg(long)]
    pub ad_dt: Option<f64>,
    #[arg(long)]
    pub ad_kappa: Option<f64>,
    /// exponential or rational.
    #[arg(long)]
    pub conductance: Option<String>,
    /// Output directory; receives images/, manifest.csv and the run manifest.
    #[arg(long)]
    pub out: PathBuf,
}

fn resolve(args: &PrepArgs) -> Result<PreprocConfig> {
    let mut cfg = match &args.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        // procedural sources are already framed on the region of interest
        None if args.synthetic.is_some() => PreprocConfig {
            crop: CropSpec {
                width_fraction: 1.0,
                height_fraction: 1.0,
                bottom_margin_fraction: 0.0,
            },
            ..PreprocConfig::default()
        },
        None => PreprocConfig::default(),
    };
    if let Some(s) = args.size {
        cfg.output_width = s;
        cfg.output_height = s;
    }
    if let Some(v) = args.crop_width {
        cfg.crop.width_fraction = v;
    }
    if let Some(v) = args.crop_height {
        cfg.crop.height_fraction = v;
    }
    if let Some(v) = args.crop_margin {
        cfg.crop.bottom_margin_fraction = v;
    }
    let ad_flags = args.ad_iterations.is_some() || args.ad_dt.is_some() || args.ad_kappa.is_some() || args.conductance.is_some();
    if args.denoise || ad_flags {
        let mut ad = cfg.denoise.unwrap_or_default();
        if let Some(v) = args.ad_iterations {
            ad.iterations = v;
        }
        if let Some(v) = args.ad_dt {
            ad.dt = v;
        }
        if let Some(v) = args.ad_kappa {
            ad.kappa = v;
        }
        if let Some(c) = &args.conductance {
            ad.conductance = parse_conductance(c)?;
        }
        cfg.denoise = Some(ad);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn parse_conductance(s: &str) -> Result<Conductance> {
    match s {
        "exponential" => Ok(Conductance::Exponential),
        "rational" => Ok(Conductance::Rational),
        other => Err(pano_core::Error::Config(format!("unknown conductance '{other}' (exponential or rational)")).into()),
    }
}

pub fn run(args: &PrepArgs, argv: &[String]) -> Result<()> {
    let cfg = resolve(args)?;
    create_out_dir(&args.out)?;
    let source_dir = match (&args.input, args.synthetic) {
        (Some(dir), _) => dir.clone(),
        (None, Some(n)) => {
            let dir = args.out.join("source");
            create_out_dir(&dir)?;
            for (i, img) in synthetic_dataset(n, args.synthetic_size, args.seed)?.iter().enumerate() {
                img.save(&dir.join(format!("synthetic_{i:05}.png")))?;
            }
            dir
        }
        (None, None) => unreachable!("clap requires --input or --synthetic"),
    };
    let exclude = match &args.exclude {
        Some(p) => read_exclude_list(p)?,
        None => Vec::new(),
    };
    let manifest = build_manifest(&source_dir, &exclude)?;
    let images_dir = args.out.join("images");
    create_out_dir(&images_dir)?;
    let mut written = 0;
    for entry in manifest.included() {
        let img = RawImage::load(&entry.path).with_context(|| format!("loading {}", entry.path.display()))?;
        preprocess(&img, &cfg)
            .with_context(|| format!("preprocessing {}", entry.id))?
            .save(&images_dir.join(format!("{}.png", entry.id)))?;
        written += 1;
    }
    let manifest_path = args.out.join("manifest.csv");
    manifest.save(&manifest_path)?;
    log::info!(
        "{written} of {} images preprocessed into {}",
        manifest.total(),
        images_dir.display()
    );

    let config = serde_json::json!({
        "preprocess": cfg,
        "synthetic": args.synthetic.map(|n| serde_json::json!({"count": n, "size": args.synthetic_size})),
        "warnings": manifest.warnings,
    });
    let mut run = RunManifest::new("prep", argv, Some(args.seed), config);
    if args.input.is_some() {
        run.add_input(&source_dir)?;
    }
    if let Some(p) = &args.exclude {
        run.add_input(p)?;
    }
    run.add_output(&images_dir);
    run.add_output(&manifest_path);
    run.write(&args.out)?;
    Ok(())
}
