use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::train::ModelPreset;

/// The twelve rating criteria, in table column order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Criterion {
    OR,
    CS,
    CB,
    CR,
    RT,
    CTB,
    TB,
    BS,
    OS,
    AA,
    MC,
    HP,
}

pub const NUM_CRITERIA: usize = 12;
pub const MIN_SCORE: u8 = 1;
pub const MAX_SCORE: u8 = 5;

impl Criterion {
    pub const ALL: [Criterion; NUM_CRITERIA] = [
        Self::OR,
        Self::CS,
        Self::CB,
        Self::CR,
        Self::RT,
        Self::CTB,
        Self::TB,
        Self::BS,
        Self::OS,
        Self::AA,
        Self::MC,
        Self::HP,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn abbrev(self) -> &'static str {
        match self {
            Self::OR => "OR",
            Self::CS => "CS",
            Self::CB => "CB",
            Self::CR => "CR",
            Self::RT => "RT",
            Self::CTB => "CTB",
            Self::TB => "TB",
            Self::BS => "BS",
            Self::OS => "OS",
            Self::AA => "AA",
            Self::MC => "MC",
            Self::HP => "HP",
        }
    }

    pub fn full_name(self) -> &'static str {
        match self {
            Self::OR => "Overall Realism",
            Self::CS => "Clarity and Sharpness",
            Self::CB => "Contrast and Brightness",
            Self::CR => "Crowns",
            Self::RT => "Roots",
            Self::CTB => "Cortical Bone",
            Self::TB => "Trabecular Bone",
            Self::BS => "Bone Shape",
            Self::OS => "Occlusal Space",
            Self::AA => "Absence of Artifacts",
            Self::MC => "Mandibular Canal",
            Self::HP => "Hard Palate",
        }
    }
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.abbrev())
    }
}

impl FromStr for Criterion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.abbrev().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Config(format!("unknown criterion '{s}'")))
    }
}

/// One rater's twelve scores for one image.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub rater_id: String,
    pub image_id: String,
    pub model_id: ModelPreset,
    pub scores: [u8; NUM_CRITERIA],
    pub timestamp: String,
}

impl ScoreRecord {
    pub fn score(&self, c: Criterion) -> u8 {
        self.scores[c.index()]
    }

    pub fn validate(&self) -> Result<()> {
        for c in Criterion::ALL {
            let v = self.score(c);
            if !(MIN_SCORE..=MAX_SCORE).contains(&v) {
                return Err(Error::Validation(format!(
                    "record (rater {}, image {}): {c} = {v} is outside {MIN_SCORE}..={MAX_SCORE}",
                    self.rater_id, self.image_id
                )));
            }
        }
        Ok(())
    }

    pub fn mean_score(&self) -> f64 {
        self.scores.iter().map(|&v| f64::from(v)).sum::<f64>() / NUM_CRITERIA as f64
    }
}

pub fn csv_header() -> Vec<&'static str> {
    let mut h = vec!["rater_id", "image_id", "model_id"];
    h.extend(Criterion::ALL.iter().map(|c| c.abbrev()));
    h.push("timestamp");
    h
}

/// Reads score CSV. Lines starting with `#` are comments. Every record is
/// validated; the error names the offending line.
pub fn read_scores_csv<R: Read>(reader: R) -> Result<Vec<ScoreRecord>> {
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(reader);
    let header: Vec<String> = r.headers()?.iter().map(|h| h.trim().to_string()).collect();
    if header != csv_header() {
        return Err(Error::Format(format!(
            "score CSV header must be {}, got {}",
            csv_header().join(","),
            header.join(",")
        )));
    }
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let mut scores = [0u8; NUM_CRITERIA];
        for (i, c) in Criterion::ALL.iter().enumerate() {
            let raw = rec[3 + i].trim();
            scores[i] = raw.parse().map_err(|_| {
                Error::Validation(format!("line {line} (image {}): {c} = '{raw}' is not a score", &rec[1]))
            })?;
        }
        let record = ScoreRecord {
            rater_id: rec[0].to_string(),
            image_id: rec[1].to_string(),
            model_id: rec[2].parse().map_err(|e: Error| Error::Validation(format!("line {line}: {e}")))?,
            scores,
            timestamp: rec[3 + NUM_CRITERIA].to_string(),
        };
        record
            .validate()
            .map_err(|e| match e {
                Error::Validation(m) => Error::Validation(format!("line {line}: {m}")),
                other => other,
            })?;
        out.push(record);
    }
    Ok(out)
}

pub fn write_scores_csv<W: Write>(writer: W, records: &[ScoreRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(csv_header())?;
    for r in records {
        let mut row = vec![r.rater_id.clone(), r.image_id.clone(), r.model_id.to_string()];
        row.extend(r.scores.iter().map(u8::to_string));
        row.push(r.timestamp.clone());
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::Data(format!("writing score CSV: {e}")))
}
