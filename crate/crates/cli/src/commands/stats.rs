use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use pano_core::stats::{
    aggregate_means, boxplot_rows, dunn_test, model_groups, read_scores_csv, write_boxplot_csv, Correction, Grouping,
};

use crate::images::create_out_dir;
use crate::manifest::RunManifest;

#[derive(Debug, Args)]
pub struct StatsArgs {
    /// Expert score CSV (the rating-service export format).
    #[arg(long)]
    pub scores: PathBuf,
    /// Observations compared between models: image-mean, all-scores or a
    /// criterion abbreviation.
    #[arg(long, default_value = "image-mean")]
    pub grouping: String,
    /// Pairwise p-value adjustment: none, bonferroni or holm.
    #[arg(long, default_value = "none")]
    pub correction: String,
    /// Output directory for means.csv, radar.csv, boxplot.csv and dunn.csv.
    #[arg(long)]
    pub out: PathBuf,
}

fn create(path: &std::path::Path) -> Result<std::fs::File> {
    std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))
}

pub fn run(args: &StatsArgs, argv: &[String]) -> Result<()> {
    let grouping: Grouping = args.grouping.parse()?;
    let correction: Correction = args.correction.parse()?;
    let file = std::fs::File::open(&args.scores).with_context(|| format!("opening {}", args.scores.display()))?;
    let records = read_scores_csv(std::io::BufReader::new(file))?;
    create_out_dir(&args.out)?;

    let table = aggregate_means(&records)?;
    let table_path = args.out.join("means.csv");
    table.write_csv(create(&table_path)?)?;
    let radar_path = args.out.join("radar.csv");
    table.write_radar_csv(create(&radar_path)?)?;
    let box_path = args.out.join("boxplot.csv");
    write_boxplot_csv(create(&box_path)?, &boxplot_rows(&records)?)?;

    let (models, groups) = model_groups(&records, grouping)?;
    let dunn = dunn_test(&groups, correction)?;
    let labels: Vec<String> = models.iter().map(ToString::to_string).collect();
    let dunn_path = args.out.join("dunn.csv");
    dunn.write_csv(create(&dunn_path)?, &labels)?;
    log::info!(
        "{} records, Kruskal-Wallis H={:.4} p={:.6}",
        records.len(),
        dunn.kruskal.h,
        dunn.kruskal.p
    );

    let config = serde_json::json!({"grouping": grouping.to_string(), "correction": correction.to_string()});
    let mut run = RunManifest::new("stats", argv, None, config);
    run.add_input(&args.scores)?;
    for p in [table_path, radar_path, box_path, dunn_path] {
        run.add_output(p);
    }
    run.write(&args.out)?;
    Ok(())
}
