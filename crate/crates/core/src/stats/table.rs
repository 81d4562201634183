use std::collections::BTreeMap;
use std::io::Write;

use super::records::{Criterion, ScoreRecord, NUM_CRITERIA};
use crate::error::{Error, Result};
use crate::train::ModelPreset;

/// Per-model, per-criterion score sums and counts. Means are derived, so the
/// two-decimal presentation can round exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable {
    models: Vec<ModelPreset>,
    sums: Vec<[u64; NUM_CRITERIA]>,
    counts: Vec<[u64; NUM_CRITERIA]>,
}

/// Means per (model, criterion).
pub fn aggregate_means(records: &[ScoreRecord]) -> Result<ScoreTable> {
    if records.is_empty() {
        return Err(Error::Data("no score records to aggregate".into()));
    }
    let mut acc: BTreeMap<ModelPreset, ([u64; NUM_CRITERIA], [u64; NUM_CRITERIA])> = BTreeMap::new();
    for r in records {
        r.validate()?;
        let (sums, counts) = acc.entry(r.model_id).or_default();
        for c in Criterion::ALL {
            sums[c.index()] += u64::from(r.score(c));
            counts[c.index()] += 1;
        }
    }
    let mut table = ScoreTable {
        models: Vec::new(),
        sums: Vec::new(),
        counts: Vec::new(),
    };
    for (m, (s, c)) in acc {
        table.models.push(m);
        table.sums.push(s);
        table.counts.push(c);
    }
    Ok(table)
}

/// `sum/count` rounded half-up to two decimals, as integer hundredths.
fn hundredths_half_up(sum: u64, count: u64) -> u64 {
    (200 * sum + count) / (2 * count)
}

impl ScoreTable {
    pub fn models(&self) -> &[ModelPreset] {
        &self.models
    }

    pub fn mean(&self, model: usize, c: Criterion) -> f64 {
        self.sums[model][c.index()] as f64 / self.counts[model][c.index()] as f64
    }

    pub fn count(&self, model: usize, c: Criterion) -> u64 {
        self.counts[model][c.index()]
    }

    /// Mean vector for one model in column order.
    pub fn row(&self, model: usize) -> [f64; NUM_CRITERIA] {
        Criterion::ALL.map(|c| self.mean(model, c))
    }

    pub fn model_index(&self, m: ModelPreset) -> Option<usize> {
        self.models.iter().position(|&x| x == m)
    }

    /// Two-decimal presentation, rounded half-up.
    pub fn display_mean(&self, model: usize, c: Criterion) -> String {
        let h = hundredths_half_up(self.sums[model][c.index()], self.counts[model][c.index()]);
        format!("{}.{:02}", h / 100, h % 100)
    }

    /// Models holding the highest mean for `c`. Means are compared exactly
    /// (cross-multiplied sums), so every tied model is returned.
    pub fn best(&self, c: Criterion) -> Vec<usize> {
        let i = c.index();
        let beats = |a: usize, b: usize| {
            u128::from(self.sums[a][i]) * u128::from(self.counts[b][i])
                > u128::from(self.sums[b][i]) * u128::from(self.counts[a][i])
        };
        let mut top = 0;
        for m in 1..self.models.len() {
            if beats(m, top) {
                top = m;
            }
        }
        (0..self.models.len())
            .filter(|&m| !beats(top, m))
            .collect()
    }

    pub fn is_best(&self, model: usize, c: Criterion) -> bool {
        self.best(c).contains(&model)
    }

    /// Writes `model,OR,..,HP` with two-decimal means; a trailing `*` marks
    /// the best model(s) per criterion.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["model".to_string()];
        header.extend(Criterion::ALL.iter().map(|c| c.abbrev().to_string()));
        w.write_record(&header)?;
        for m in 0..self.models.len() {
            let mut row = vec![self.models[m].to_string()];
            for c in Criterion::ALL {
                let mark = if self.is_best(m, c) { "*" } else { "" };
                row.push(format!("{}{mark}", self.display_mean(m, c)));
            }
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::Data(format!("writing score table: {e}")))
    }

    /// Radar data: one row per model with raw means in column order.
    pub fn write_radar_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["model".to_string()];
        header.extend(Criterion::ALL.iter().map(|c| c.abbrev().to_string()));
        w.write_record(&header)?;
        for m in 0..self.models.len() {
            let mut row = vec![self.models[m].to_string()];
            row.extend(self.row(m).iter().map(|v| format!("{v:?}")));
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::Data(format!("writing radar data: {e}")))
    }
}

/// Linear-interpolation quantile (type 7) of sorted data.
pub fn quantile_type7(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty() && (0.0..=1.0).contains(&q));
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// (min, Q1, median, Q3, max).
pub fn five_number_summary(values: &[f64]) -> Result<[f64; 5]> {
    if values.is_empty() {
        return Err(Error::Data("five-number summary of an empty sample".into()));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Ok([0.0, 0.25, 0.5, 0.75, 1.0].map(|q| quantile_type7(&v, q)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoxplotRow {
    pub model: ModelPreset,
    pub criterion: Criterion,
    pub n: usize,
    pub summary: [f64; 5],
}

pub fn boxplot_rows(records: &[ScoreRecord]) -> Result<Vec<BoxplotRow>> {
    let table = aggregate_means(records)?;
    let mut rows = Vec::new();
    for &model in table.models() {
        for c in Criterion::ALL {
            let vals: Vec<f64> = records
                .iter()
                .filter(|r| r.model_id == model)
                .map(|r| f64::from(r.score(c)))
                .collect();
            rows.push(BoxplotRow {
                model,
                criterion: c,
                n: vals.len(),
                summary: five_number_summary(&vals)?,
            });
        }
    }
    Ok(rows)
}

pub fn write_boxplot_csv<W: Write>(writer: W, rows: &[BoxplotRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["model", "criterion", "n", "min", "q1", "median", "q3", "max"])?;
    for r in rows {
        let mut row = vec![r.model.to_string(), r.criterion.to_string(), r.n.to_string()];
        row.extend(r.summary.iter().map(|v| format!("{v:?}")));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::Data(format!("writing boxplot data: {e}")))
}
