//! Blinded image pools and the interleaved presentation order.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use pano_core::pipeline::RawImage;
use pano_core::train::ModelPreset;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Result, ServiceError};

pub const DEFAULT_PER_MODEL: usize = 25;
pub const DEFAULT_FAMILIARIZATION: usize = 10;

fn default_per_model() -> usize {
    DEFAULT_PER_MODEL
}

fn default_familiarization() -> usize {
    DEFAULT_FAMILIARIZATION
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoolConfig {
    /// Directory of generated PNGs per model.
    pub model_dirs: BTreeMap<ModelPreset, PathBuf>,
    #[serde(default = "default_per_model")]
    pub per_model: usize,
    #[serde(default = "default_familiarization")]
    pub familiarization: usize,
    /// Source of the familiarization images. When absent they are drawn
    /// round-robin from the images each model directory holds beyond
    /// `per_model`.
    #[serde(default)]
    pub familiarization_dir: Option<PathBuf>,
    /// Seeds image selection and, unless a session overrides it, the
    /// presentation order.
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolImage {
    /// Opaque id shown to raters.
    pub id: String,
    /// Hidden from raters. `None` for familiarization images from a
    /// separate directory.
    pub model: Option<ModelPreset>,
    pub path: PathBuf,
    pub familiarization: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pool {
    pub id: String,
    pub config: PoolConfig,
    pub images: Vec<PoolImage>,
    pub created: String,
}

impl Pool {
    pub fn scored(&self) -> impl Iterator<Item = &PoolImage> {
        self.images.iter().filter(|i| !i.familiarization)
    }

    pub fn familiarization_images(&self) -> impl Iterator<Item = &PoolImage> {
        self.images.iter().filter(|i| i.familiarization)
    }

    /// Number of images in the scored pool.
    pub fn size(&self) -> usize {
        self.scored().count()
    }

    pub fn image(&self, id: &str) -> Option<&PoolImage> {
        self.images.iter().find(|i| i.id == id)
    }
}

fn list_pngs(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| ServiceError::io(dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| ServiceError::io(dir, e))?.path();
        let is_png = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("png"));
        if is_png && path.is_file() {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

fn image_id(pool_id: &str, path: &Path) -> String {
    let mut h = Sha256::new();
    h.update(pool_id.as_bytes());
    h.update([0]);
    h.update(path.to_string_lossy().as_bytes());
    let digest = h.finalize();
    let hex: String = digest[..8].iter().map(|b| format!("{b:02x}")).collect();
    format!("img_{hex}")
}

fn check_readable(path: &Path, owner: &str) -> Result<()> {
    RawImage::load(path)
        .map(|_| ())
        .map_err(|e| ServiceError::Config(format!("{owner}: cannot read {}: {e}", path.display())))
}

/// Selects the scored images and the familiarization set. Every selected
/// file is decoded once so unreadable images fail here rather than mid-session.
pub fn build_pool(id: String, config: PoolConfig, created: String) -> Result<Pool> {
    if config.model_dirs.is_empty() {
        return Err(ServiceError::Config("pool needs at least one model directory".into()));
    }
    if config.per_model == 0 {
        return Err(ServiceError::Config("per_model must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut images = Vec::new();
    let mut leftovers: Vec<(ModelPreset, Vec<PathBuf>)> = Vec::new();
    for (&model, dir) in &config.model_dirs {
        let mut files = list_pngs(dir)?;
        if files.len() < config.per_model {
            return Err(ServiceError::Config(format!(
                "model {model}: {} holds {} PNG images, {} required",
                dir.display(),
                files.len(),
                config.per_model
            )));
        }
        files.shuffle(&mut rng);
        let rest = files.split_off(config.per_model);
        for path in files {
            check_readable(&path, &format!("model {model}"))?;
            images.push(PoolImage {
                id: image_id(&id, &path),
                model: Some(model),
                path,
                familiarization: false,
            });
        }
        leftovers.push((model, rest));
    }

    let scored: HashSet<PathBuf> = images.iter().map(|i| i.path.clone()).collect();
    let wanted = config.familiarization;
    let mut chosen: Vec<(Option<ModelPreset>, PathBuf)> = Vec::new();
    if let Some(dir) = &config.familiarization_dir {
        let mut files: Vec<PathBuf> = list_pngs(dir)?.into_iter().filter(|p| !scored.contains(p)).collect();
        files.shuffle(&mut rng);
        chosen.extend(files.into_iter().take(wanted).map(|p| (None, p)));
    } else {
        let mut round = 0;
        while chosen.len() < wanted {
            let before = chosen.len();
            for (model, rest) in &leftovers {
                if chosen.len() < wanted {
                    if let Some(p) = rest.get(round) {
                        chosen.push((Some(*model), p.clone()));
                    }
                }
            }
            if chosen.len() == before {
                break;
            }
            round += 1;
        }
    }
    if chosen.len() < wanted {
        return Err(ServiceError::Config(format!(
            "familiarization set needs {wanted} images but only {} are available outside the scored pool; \
             add images to the model directories or set familiarization_dir",
            chosen.len()
        )));
    }
    for (model, path) in chosen {
        check_readable(&path, "familiarization set")?;
        images.push(PoolImage {
            id: image_id(&id, &path),
            model,
            path,
            familiarization: true,
        });
    }
    Ok(Pool {
        id,
        config,
        images,
        created,
    })
}

/// Seed for one rater's presentation order. Equal (seed, rater) pairs give
/// equal orders.
fn order_rng(seed: u64, rater: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(rater.as_bytes());
    ChaCha8Rng::from_seed(h.finalize().into())
}

/// Round-robin interleaving of the per-model queues: each round takes one
/// image from every model that still has one, in a shuffled model order.
/// A round never opens with the model that closed the previous round, so
/// with two or more models no window of four consecutive images holds the
/// same model more than twice.
pub fn interleave<T: Clone>(queues: &[Vec<T>], rng: &mut impl Rng) -> Vec<(usize, T)> {
    let mut queues: Vec<Vec<T>> = queues.to_vec();
    for q in &mut queues {
        q.shuffle(rng);
        q.reverse();
    }
    let mut out: Vec<(usize, T)> = Vec::new();
    loop {
        let mut round: Vec<usize> = (0..queues.len()).filter(|&m| !queues[m].is_empty()).collect();
        if round.is_empty() {
            return out;
        }
        round.shuffle(rng);
        if let Some(&(last, _)) = out.last() {
            if round.len() > 1 && round[0] == last {
                let swap = rng.random_range(1..round.len());
                round.swap(0, swap);
            }
        }
        for m in round {
            let item = queues[m].pop().expect("non-empty queue");
            out.push((m, item));
        }
    }
}

/// Presentation order for one session: familiarization ids (shuffled) and
/// scoring ids (interleaved by model).
pub fn session_order(pool: &Pool, seed: u64, rater: &str) -> (Vec<String>, Vec<String>) {
    let mut rng = order_rng(seed, rater);
    let mut familiarization: Vec<String> = pool.familiarization_images().map(|i| i.id.clone()).collect();
    familiarization.shuffle(&mut rng);
    let mut models: Vec<ModelPreset> = pool.scored().filter_map(|i| i.model).collect();
    models.sort();
    models.dedup();
    let queues: Vec<Vec<String>> = models
        .iter()
        .map(|&m| pool.scored().filter(|i| i.model == Some(m)).map(|i| i.id.clone()).collect())
        .collect();
    let scoring = interleave(&queues, &mut rng).into_iter().map(|(_, id)| id).collect();
    (familiarization, scoring)
}
