//! Rating sessions backed by an append-only JSON-lines log. Every state
//! change is written and synced before it is acknowledged; replaying the log
//! rebuilds the session after a restart.

use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use pano_core::stats::{Criterion, MAX_SCORE, MIN_SCORE, NUM_CRITERIA};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Result, ServiceError};
use crate::pool::{session_order, Pool};

pub const DEFAULT_BATCH_SIZE: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Familiarization,
    Scoring,
    Done,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    SessionCreated {
        session_id: String,
        pool_id: String,
        rater_id: String,
        seed: u64,
        batch_size: usize,
        familiarization: Vec<String>,
        scoring: Vec<String>,
        timestamp: String,
    },
    BatchServed {
        batch: usize,
        timestamp: String,
    },
    ScoreSubmitted {
        image_id: String,
        scores: [u8; NUM_CRITERIA],
        familiarization: bool,
        timestamp: String,
    },
}

#[derive(Debug, Clone, PartialEq)]
struct Batch {
    phase: Phase,
    images: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Submission {
    pub image_id: String,
    pub scores: [u8; NUM_CRITERIA],
    pub familiarization: bool,
    pub timestamp: String,
}

/// One image reference as handed to the rater.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRef {
    pub image_id: String,
    pub url: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchView {
    pub session_id: String,
    pub phase: Phase,
    /// Familiarization scores are stored but never exported for analysis.
    pub excluded_from_analysis: bool,
    /// Zero-based index among the batches of this phase; absent once done.
    pub batch_index: Option<usize>,
    pub images: Vec<ImageRef>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub session_id: String,
    pub pool_id: String,
    pub rater_id: String,
    pub phase: Phase,
    pub batch_size: usize,
    pub familiarization_total: usize,
    pub scoring_total: usize,
    pub scored: usize,
    /// The batch being rated, if one has been served and is incomplete.
    pub current_batch: Vec<String>,
    pub missing: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ack {
    pub image_id: String,
    pub accepted: bool,
    /// Unscored images left in the current batch.
    pub batch_remaining: usize,
}

/// Scores as submitted: twelve values in column order, or keyed by
/// criterion abbreviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScoreInput {
    List(Vec<i64>),
    Named(BTreeMap<String, i64>),
}

impl ScoreInput {
    /// Checks count and range; the error lists every offending criterion.
    pub fn validate(&self) -> Result<[u8; NUM_CRITERIA]> {
        let values: Vec<(Criterion, Option<i64>)> = match self {
            ScoreInput::List(v) => {
                if v.len() != NUM_CRITERIA {
                    return Err(ServiceError::Validation {
                        message: format!("expected {NUM_CRITERIA} scores, got {}", v.len()),
                        details: json!({ "expected": NUM_CRITERIA, "got": v.len() }),
                    });
                }
                Criterion::ALL.iter().zip(v).map(|(&c, &x)| (c, Some(x))).collect()
            }
            ScoreInput::Named(m) => {
                if let Some(k) = m.keys().find(|k| k.parse::<Criterion>().is_err()) {
                    return Err(ServiceError::Validation {
                        message: format!("unknown criterion '{k}'"),
                        details: json!({ "unknown": [k] }),
                    });
                }
                let lookup: HashMap<Criterion, i64> = m.iter().map(|(k, &v)| (k.parse().expect("checked"), v)).collect();
                Criterion::ALL.iter().map(|&c| (c, lookup.get(&c).copied())).collect()
            }
        };
        let missing: Vec<String> = values.iter().filter(|v| v.1.is_none()).map(|v| v.0.to_string()).collect();
        let out_of_range: Vec<String> = values
            .iter()
            .filter_map(|&(c, v)| v.filter(|x| !(i64::from(MIN_SCORE)..=i64::from(MAX_SCORE)).contains(x)).map(|_| c))
            .map(|c| c.to_string())
            .collect();
        if !missing.is_empty() || !out_of_range.is_empty() {
            let mut parts = Vec::new();
            if !missing.is_empty() {
                parts.push(format!("missing {}", missing.join(", ")));
            }
            if !out_of_range.is_empty() {
                parts.push(format!("outside {MIN_SCORE}..={MAX_SCORE}: {}", out_of_range.join(", ")));
            }
            return Err(ServiceError::Validation {
                message: format!("invalid scores: {}", parts.join("; ")),
                details: json!({ "missing": missing, "out_of_range": out_of_range }),
            });
        }
        let mut scores = [0u8; NUM_CRITERIA];
        for (i, (_, v)) in values.iter().enumerate() {
            scores[i] = v.expect("checked") as u8;
        }
        Ok(scores)
    }
}

pub(crate) fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

struct EventLog {
    path: PathBuf,
    file: File,
}

impl EventLog {
    fn open(path: &Path) -> Result<Self> {
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| ServiceError::io(path, e))?;
        Ok(Self {
            path: path.to_path_buf(),
            file,
        })
    }

    /// Appends one event and syncs it to disk.
    fn append(&mut self, event: &Event) -> Result<()> {
        let mut line = serde_json::to_vec(event).map_err(|e| ServiceError::Internal(e.to_string()))?;
        line.push(b'\n');
        self.file
            .write_all(&line)
            .and_then(|()| self.file.sync_data())
            .map_err(|e| ServiceError::io(&self.path, e))
    }
}

pub struct Session {
    pub id: String,
    pub pool_id: String,
    pub rater_id: String,
    pub seed: u64,
    pub batch_size: usize,
    pub created: String,
    familiarization_total: usize,
    batches: Vec<Batch>,
    /// Index of the most recently served batch.
    served: Option<usize>,
    submissions: Vec<Submission>,
    scored: HashMap<String, usize>,
    log: EventLog,
}

fn batches(familiarization: &[String], scoring: &[String], size: usize) -> Vec<Batch> {
    let mut out: Vec<Batch> = familiarization
        .chunks(size)
        .map(|c| Batch {
            phase: Phase::Familiarization,
            images: c.to_vec(),
        })
        .collect();
    out.extend(scoring.chunks(size).map(|c| Batch {
        phase: Phase::Scoring,
        images: c.to_vec(),
    }));
    out
}

impl Session {
    /// Starts a session and writes its opening event to `log_path`.
    pub fn create(
        log_path: &Path,
        id: String,
        pool: &Pool,
        rater_id: String,
        seed: u64,
        batch_size: usize,
    ) -> Result<Self> {
        if batch_size == 0 {
            return Err(ServiceError::Config("batch_size must be at least 1".into()));
        }
        if rater_id.trim().is_empty() {
            return Err(ServiceError::validation("rater_id must not be empty"));
        }
        let (familiarization, scoring) = session_order(pool, seed, &rater_id);
        let created = now();
        let event = Event::SessionCreated {
            session_id: id.clone(),
            pool_id: pool.id.clone(),
            rater_id: rater_id.clone(),
            seed,
            batch_size,
            familiarization: familiarization.clone(),
            scoring: scoring.clone(),
            timestamp: created.clone(),
        };
        let mut log = EventLog::open(log_path)?;
        log.append(&event)?;
        Ok(Self {
            id,
            pool_id: pool.id.clone(),
            rater_id,
            seed,
            batch_size,
            created,
            familiarization_total: familiarization.len(),
            batches: batches(&familiarization, &scoring, batch_size),
            served: None,
            submissions: Vec::new(),
            scored: HashMap::new(),
            log,
        })
    }

    /// Rebuilds a session from its log. A final line without a trailing
    /// newline is a write that never completed, and so was never
    /// acknowledged; it is dropped.
    pub fn replay(log_path: &Path) -> Result<Self> {
        let corrupt = |message: String| ServiceError::CorruptLog {
            path: log_path.to_path_buf(),
            message,
        };
        let raw = std::fs::read(log_path).map_err(|e| ServiceError::io(log_path, e))?;
        let complete = raw.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
        if complete < raw.len() {
            log::warn!(
                "{}: dropping {} bytes of an unfinished final record",
                log_path.display(),
                raw.len() - complete
            );
            let f = OpenOptions::new()
                .write(true)
                .open(log_path)
                .map_err(|e| ServiceError::io(log_path, e))?;
            f.set_len(complete as u64).map_err(|e| ServiceError::io(log_path, e))?;
        }
        let mut lines = BufReader::new(&raw[..complete]).lines();
        let first = lines
            .next()
            .ok_or_else(|| corrupt("empty log".into()))?
            .map_err(|e| corrupt(e.to_string()))?;
        let Event::SessionCreated {
            session_id,
            pool_id,
            rater_id,
            seed,
            batch_size,
            familiarization,
            scoring,
            timestamp,
        } = serde_json::from_str(&first).map_err(|e| corrupt(format!("line 1: {e}")))?
        else {
            return Err(corrupt("first record is not session_created".into()));
        };
        let mut session = Self {
            id: session_id,
            pool_id,
            rater_id,
            seed,
            batch_size,
            created: timestamp,
            familiarization_total: familiarization.len(),
            batches: batches(&familiarization, &scoring, batch_size),
            served: None,
            submissions: Vec::new(),
            scored: HashMap::new(),
            log: EventLog::open(log_path)?,
        };
        for (n, line) in lines.enumerate() {
            let line = line.map_err(|e| corrupt(e.to_string()))?;
            let event: Event = serde_json::from_str(&line).map_err(|e| corrupt(format!("line {}: {e}", n + 2)))?;
            match event {
                Event::SessionCreated { .. } => return Err(corrupt(format!("line {}: second session_created", n + 2))),
                Event::BatchServed { batch, .. } => session.served = Some(batch),
                Event::ScoreSubmitted {
                    image_id,
                    scores,
                    familiarization,
                    timestamp,
                } => session.record(Submission {
                    image_id,
                    scores,
                    familiarization,
                    timestamp,
                }),
            }
        }
        Ok(session)
    }

    fn record(&mut self, s: Submission) {
        self.scored.insert(s.image_id.clone(), self.submissions.len());
        self.submissions.push(s);
    }

    fn current(&self) -> Option<&Batch> {
        self.served.map(|b| &self.batches[b])
    }

    fn missing(&self) -> Vec<String> {
        self.current()
            .map(|b| b.images.iter().filter(|i| !self.scored.contains_key(*i)).cloned().collect())
            .unwrap_or_default()
    }

    pub fn phase(&self) -> Phase {
        match self.served {
            Some(b) if !self.missing().is_empty() => self.batches[b].phase,
            _ => {
                let next = self.served.map_or(0, |b| b + 1);
                self.batches.get(next).map_or(Phase::Done, |b| b.phase)
            }
        }
    }

    pub fn submissions(&self) -> &[Submission] {
        &self.submissions
    }

    pub fn is_done(&self) -> bool {
        self.phase() == Phase::Done
    }

    fn view_batch(&self, index: Option<usize>) -> BatchView {
        let (phase, batch_index, images) = match index {
            Some(i) => {
                let b = &self.batches[i];
                let first_of_phase = self.batches.iter().position(|x| x.phase == b.phase).unwrap_or(0);
                (b.phase, Some(i - first_of_phase), b.images.clone())
            }
            None => (Phase::Done, None, Vec::new()),
        };
        BatchView {
            session_id: self.id.clone(),
            phase,
            excluded_from_analysis: phase == Phase::Familiarization,
            batch_index,
            images: images
                .into_iter()
                .map(|id| ImageRef {
                    url: format!("/images/{id}"),
                    image_id: id,
                })
                .collect(),
        }
    }

    /// Serves the next batch. The previous batch must be fully scored.
    pub fn next_batch(&mut self) -> Result<BatchView> {
        let missing = self.missing();
        if !missing.is_empty() {
            return Err(ServiceError::Conflict {
                code: "batch_incomplete",
                message: format!("{} image(s) of the current batch are not scored yet", missing.len()),
                details: json!({ "missing": missing }),
            });
        }
        let next = self.served.map_or(0, |b| b + 1);
        if next >= self.batches.len() {
            return Ok(self.view_batch(None));
        }
        self.log.append(&Event::BatchServed {
            batch: next,
            timestamp: now(),
        })?;
        self.served = Some(next);
        Ok(self.view_batch(Some(next)))
    }

    fn contains(&self, image_id: &str) -> bool {
        self.batches.iter().any(|b| b.images.iter().any(|i| i == image_id))
    }

    /// Validates, persists and then acknowledges one image's scores.
    pub fn submit(&mut self, image_id: &str, input: &ScoreInput) -> Result<Ack> {
        let scores = input.validate()?;
        if !self.contains(image_id) {
            return Err(ServiceError::NotFound(format!("image {image_id} is not part of session {}", self.id)));
        }
        if self.scored.contains_key(image_id) {
            return Err(ServiceError::Conflict {
                code: "duplicate_score",
                message: format!("image {image_id} has already been scored in this session"),
                details: json!({ "image_id": image_id }),
            });
        }
        let Some(batch) = self.current().filter(|b| b.images.iter().any(|i| i == image_id)) else {
            return Err(ServiceError::Conflict {
                code: "not_in_current_batch",
                message: format!("image {image_id} is not in the batch currently being rated"),
                details: json!({ "image_id": image_id, "current_batch": self.current().map(|b| b.images.clone()) }),
            });
        };
        let familiarization = batch.phase == Phase::Familiarization;
        let submission = Submission {
            image_id: image_id.to_string(),
            scores,
            familiarization,
            timestamp: now(),
        };
        self.log.append(&Event::ScoreSubmitted {
            image_id: submission.image_id.clone(),
            scores,
            familiarization,
            timestamp: submission.timestamp.clone(),
        })?;
        self.record(submission);
        Ok(Ack {
            image_id: image_id.to_string(),
            accepted: true,
            batch_remaining: self.missing().len(),
        })
    }

    pub fn view(&self) -> SessionView {
        SessionView {
            session_id: self.id.clone(),
            pool_id: self.pool_id.clone(),
            rater_id: self.rater_id.clone(),
            phase: self.phase(),
            batch_size: self.batch_size,
            familiarization_total: self.familiarization_total,
            scoring_total: self.batches.iter().filter(|b| b.phase == Phase::Scoring).map(|b| b.images.len()).sum(),
            scored: self.submissions.iter().filter(|s| !s.familiarization).count(),
            current_batch: match self.missing().is_empty() {
                true => Vec::new(),
                false => self.current().map(|b| b.images.clone()).unwrap_or_default(),
            },
            missing: self.missing(),
        }
    }
}
