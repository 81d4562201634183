use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use pano_core::pipeline::RawImage;
use pano_core::stats::{write_scores_csv, ScoreRecord};
use serde::{Deserialize, Serialize};

use crate::error::{Result, ServiceError};
use crate::pool::{build_pool, Pool, PoolConfig};
use crate::session::{now, Ack, BatchView, ScoreInput, Session, SessionView, DEFAULT_BATCH_SIZE};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServiceConfig {
    pub data_dir: PathBuf,
    /// Shared bearer token; `None` disables authentication.
    pub token: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolSummary {
    pub pool_id: String,
    pub size: usize,
    pub models: usize,
    pub per_model: usize,
    pub familiarization: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionRequest {
    pub pool_id: String,
    pub rater_id: String,
    /// Overrides the pool's interleaving seed.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub batch_size: Option<usize>,
}

/// Export CSV plus its counts.
#[derive(Debug, Clone, PartialEq)]
pub struct Export {
    pub csv: String,
    pub rows: usize,
    pub complete: bool,
}

/// Pools are immutable once created and shared behind `Arc`; each session
/// sits behind its own mutex so writes to one session's log are serialized
/// without blocking other sessions.
pub struct RatingService {
    config: ServiceConfig,
    pools: RwLock<HashMap<String, Arc<Pool>>>,
    /// image id -> owning pool id
    images: RwLock<HashMap<String, String>>,
    sessions: RwLock<HashMap<String, Arc<Mutex<Session>>>>,
}

fn pools_dir(root: &Path) -> PathBuf {
    root.join("pools")
}

fn sessions_dir(root: &Path) -> PathBuf {
    root.join("sessions")
}

fn read_lock<T>(l: &RwLock<T>) -> std::sync::RwLockReadGuard<'_, T> {
    l.read().unwrap_or_else(std::sync::PoisonError::into_inner)
}

fn write_lock<T>(l: &RwLock<T>) -> std::sync::RwLockWriteGuard<'_, T> {
    l.write().unwrap_or_else(std::sync::PoisonError::into_inner)
}

fn lock(s: &Mutex<Session>) -> std::sync::MutexGuard<'_, Session> {
    s.lock().unwrap_or_else(std::sync::PoisonError::into_inner)
}

/// Writes through a temporary file and a rename so a crash never leaves a
/// half-written manifest.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    let mut f = std::fs::File::create(&tmp).map_err(|e| ServiceError::io(&tmp, e))?;
    f.write_all(bytes)
        .and_then(|()| f.sync_all())
        .map_err(|e| ServiceError::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| ServiceError::io(path, e))
}

impl RatingService {
    /// Opens (or initializes) the data directory and replays every stored
    /// pool and session.
    pub fn open(config: ServiceConfig) -> Result<Self> {
        let root = &config.data_dir;
        for dir in [pools_dir(root), sessions_dir(root)] {
            std::fs::create_dir_all(&dir).map_err(|e| ServiceError::io(&dir, e))?;
        }
        let svc = Self {
            config,
            pools: RwLock::new(HashMap::new()),
            images: RwLock::new(HashMap::new()),
            sessions: RwLock::new(HashMap::new()),
        };
        let root = svc.config.data_dir.clone();
        for path in sorted_files(&pools_dir(&root), "json")? {
            let raw = std::fs::read(&path).map_err(|e| ServiceError::io(&path, e))?;
            let pool: Pool = serde_json::from_slice(&raw).map_err(|e| ServiceError::CorruptLog {
                path: path.clone(),
                message: e.to_string(),
            })?;
            svc.insert_pool(pool);
        }
        for path in sorted_files(&sessions_dir(&root), "jsonl")? {
            let session = Session::replay(&path)?;
            if !read_lock(&svc.pools).contains_key(&session.pool_id) {
                return Err(ServiceError::CorruptLog {
                    path,
                    message: format!("unknown pool {}", session.pool_id),
                });
            }
            write_lock(&svc.sessions).insert(session.id.clone(), Arc::new(Mutex::new(session)));
        }
        log::info!(
            "rating data in {}: {} pool(s), {} session(s)",
            root.display(),
            read_lock(&svc.pools).len(),
            read_lock(&svc.sessions).len()
        );
        Ok(svc)
    }

    pub fn token(&self) -> Option<&str> {
        self.config.token.as_deref()
    }

    fn insert_pool(&self, pool: Pool) {
        let mut images = write_lock(&self.images);
        for img in &pool.images {
            images.insert(img.id.clone(), pool.id.clone());
        }
        write_lock(&self.pools).insert(pool.id.clone(), Arc::new(pool));
    }

    fn pool(&self, id: &str) -> Result<Arc<Pool>> {
        read_lock(&self.pools)
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::NotFound(format!("no pool {id}")))
    }

    fn session(&self, id: &str) -> Result<Arc<Mutex<Session>>> {
        read_lock(&self.sessions)
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::NotFound(format!("no session {id}")))
    }

    pub fn create_pool(&self, config: PoolConfig) -> Result<PoolSummary> {
        let id = format!("pool_{}", uuid::Uuid::new_v4().simple());
        let pool = build_pool(id.clone(), config, now())?;
        let bytes = serde_json::to_vec_pretty(&pool).map_err(|e| ServiceError::Internal(e.to_string()))?;
        write_atomic(&pools_dir(&self.config.data_dir).join(format!("{id}.json")), &bytes)?;
        let summary = PoolSummary {
            pool_id: id,
            size: pool.size(),
            models: pool.config.model_dirs.len(),
            per_model: pool.config.per_model,
            familiarization: pool.familiarization_images().count(),
        };
        log::info!("created {} with {} scored images", summary.pool_id, summary.size);
        self.insert_pool(pool);
        Ok(summary)
    }

    pub fn create_session(&self, req: SessionRequest) -> Result<SessionView> {
        let pool = self.pool(&req.pool_id)?;
        let id = format!("sess_{}", uuid::Uuid::new_v4().simple());
        let path = sessions_dir(&self.config.data_dir).join(format!("{id}.jsonl"));
        let session = Session::create(
            &path,
            id.clone(),
            &pool,
            req.rater_id,
            req.seed.unwrap_or(pool.config.seed),
            req.batch_size.unwrap_or(DEFAULT_BATCH_SIZE),
        )?;
        let view = session.view();
        write_lock(&self.sessions).insert(id, Arc::new(Mutex::new(session)));
        Ok(view)
    }

    pub fn session_view(&self, id: &str) -> Result<SessionView> {
        let s = self.session(id)?;
        let view = lock(&s).view();
        Ok(view)
    }

    pub fn next_batch(&self, session_id: &str) -> Result<BatchView> {
        let s = self.session(session_id)?;
        let mut session = lock(&s);
        session.next_batch()
    }

    pub fn submit(&self, session_id: &str, image_id: &str, scores: &ScoreInput) -> Result<Ack> {
        let s = self.session(session_id)?;
        let mut session = lock(&s);
        session.submit(image_id, scores)
    }

    /// PNG bytes of a pool image, re-encoded so no file metadata reaches
    /// the rater.
    pub fn image_png(&self, image_id: &str) -> Result<Vec<u8>> {
        let unknown = || ServiceError::NotFound(format!("no image {image_id}"));
        let pool_id = read_lock(&self.images).get(image_id).cloned().ok_or_else(unknown)?;
        let pool = self.pool(&pool_id)?;
        let img = pool.image(image_id).ok_or_else(unknown)?;
        let raw = RawImage::load(&img.path).map_err(|e| ServiceError::Internal(format!("{image_id}: {e}")))?;
        Ok(raw.encode_png()?)
    }

    /// Scoring-phase records of every session on the pool in the
    /// expert-stats CSV format, model ids restored. The leading comment
    /// states whether every session has finished.
    pub fn export(&self, pool_id: &str) -> Result<Export> {
        let pool = self.pool(pool_id)?;
        let mut sessions: Vec<Arc<Mutex<Session>>> = read_lock(&self.sessions)
            .values()
            .filter(|s| lock(s).pool_id == pool_id)
            .cloned()
            .collect();
        sessions.sort_by_key(|s| {
            let s = lock(s);
            (s.created.clone(), s.id.clone())
        });
        let mut records = Vec::new();
        let mut complete = !sessions.is_empty();
        for s in &sessions {
            let s = lock(s);
            complete &= s.is_done();
            for sub in s.submissions().iter().filter(|x| !x.familiarization) {
                let model = pool
                    .image(&sub.image_id)
                    .and_then(|i| i.model)
                    .ok_or_else(|| ServiceError::Internal(format!("image {} has no model", sub.image_id)))?;
                records.push(ScoreRecord {
                    rater_id: s.rater_id.clone(),
                    image_id: sub.image_id.clone(),
                    model_id: model,
                    scores: sub.scores,
                    timestamp: sub.timestamp.clone(),
                });
            }
        }
        let mut out = format!(
            "# pool={pool_id} complete={complete} sessions={} rows={} expected={}\n",
            sessions.len(),
            records.len(),
            sessions.len() * pool.size()
        )
        .into_bytes();
        write_scores_csv(&mut out, &records)?;
        Ok(Export {
            csv: String::from_utf8(out).map_err(|e| ServiceError::Internal(e.to_string()))?,
            rows: records.len(),
            complete,
        })
    }
}

fn sorted_files(dir: &Path, ext: &str) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| ServiceError::io(dir, e))? {
        let path = entry.map_err(|e| ServiceError::io(dir, e))?.path();
        if path.extension().and_then(|e| e.to_str()) == Some(ext) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}
