//! Expert-score aggregation and nonparametric group comparisons.

mod nonparametric;
mod records;
mod table;

pub use nonparametric::{adjust, dunn_test, kruskal_wallis, midranks, Correction, DunnResult, KruskalWallis};
pub use records::{
    csv_header, read_scores_csv, write_scores_csv, Criterion, ScoreRecord, MAX_SCORE, MIN_SCORE, NUM_CRITERIA,
};
pub use table::{
    aggregate_means, boxplot_rows, five_number_summary, quantile_type7, write_boxplot_csv, BoxplotRow, ScoreTable,
};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::train::ModelPreset;

/// What counts as one observation when comparing models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Grouping {
    /// Mean of the twelve criterion scores per rated image.
    #[default]
    ImageMean,
    /// Every individual criterion score.
    AllScores,
    /// Scores of a single criterion.
    Criterion(Criterion),
}

impl fmt::Display for Grouping {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Grouping::ImageMean => f.write_str("image-mean"),
            Grouping::AllScores => f.write_str("all-scores"),
            Grouping::Criterion(c) => write!(f, "{c}"),
        }
    }
}

impl FromStr for Grouping {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "image-mean" => Ok(Grouping::ImageMean),
            "all-scores" => Ok(Grouping::AllScores),
            other => other.parse().map(Grouping::Criterion).map_err(|_| {
                Error::Config(format!("unknown grouping '{other}' (image-mean, all-scores or a criterion)"))
            }),
        }
    }
}

/// Observations per model, models in ascending order.
pub fn model_groups(records: &[ScoreRecord], grouping: Grouping) -> Result<(Vec<ModelPreset>, Vec<Vec<f64>>)> {
    let mut models: Vec<ModelPreset> = records.iter().map(|r| r.model_id).collect();
    models.sort();
    models.dedup();
    let groups = models
        .iter()
        .map(|&m| {
            let rs = records.iter().filter(move |r| r.model_id == m);
            match grouping {
                Grouping::ImageMean => rs.map(ScoreRecord::mean_score).collect(),
                Grouping::AllScores => rs.flat_map(|r| r.scores.map(f64::from)).collect(),
                Grouping::Criterion(c) => rs.map(|r| f64::from(r.score(c))).collect(),
            }
        })
        .collect();
    for r in records {
        r.validate()?;
    }
    Ok((models, groups))
}
