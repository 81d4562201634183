use std::collections::{BTreeSet, HashSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NOTE_EXCLUDED: &str = "excluded by screening list";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub path: PathBuf,
    pub included: bool,
    pub notes: String,
}

/// Screened image listing. Excluded images stay listed with a note.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    /// Non-fatal problems met while building, such as duplicate or unknown
    /// exclusion ids.
    pub warnings: Vec<String>,
}

impl DatasetManifest {
    pub fn total(&self) -> usize {
        self.entries.len()
    }

    pub fn included_count(&self) -> usize {
        self.entries.iter().filter(|e| e.included).count()
    }

    pub fn included(&self) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(|e| e.included)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for e in &self.entries {
            w.serialize(e)?;
        }
        if self.entries.is_empty() {
            w.write_record(["id", "path", "included", "notes"])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut rd = csv::Reader::from_path(path)?;
        let entries = rd.deserialize().collect::<std::result::Result<Vec<ManifestEntry>, _>>()?;
        let mut seen = HashSet::new();
        for e in &entries {
            if !seen.insert(&e.id) {
                return Err(Error::Format(format!("duplicate id {} in manifest", e.id)));
            }
        }
        Ok(Self {
            entries,
            warnings: Vec::new(),
        })
    }
}

/// Reads one id per line; blank lines and `#` comments are ignored.
pub fn read_exclude_list(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect())
}

fn is_png(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("png"))
}

/// Lists the PNG files of `dir` in lexicographic file-name order. The id of
/// an image is its file stem. Files whose header cannot be read are kept but
/// marked excluded with the reason.
pub fn build_manifest(dir: &Path, exclude: &[String]) -> Result<DatasetManifest> {
    let rd = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths = Vec::new();
    for entry in rd {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_file() && is_png(&path) {
            paths.push(path);
        }
    }
    paths.sort_by(|a, b| a.file_name().cmp(&b.file_name()));

    let mut warnings = Vec::new();
    let mut excluded = BTreeSet::new();
    for id in exclude {
        if !excluded.insert(id.as_str()) {
            warnings.push(format!("exclusion id {id} listed more than once"));
        }
    }

    let mut entries = Vec::with_capacity(paths.len());
    let mut ids = HashSet::new();
    for path in paths {
        let id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        if !ids.insert(id.clone()) {
            return Err(Error::Data(format!("two files share the id {id}")));
        }
        let readable = image::ImageReader::open(&path)
            .and_then(|r| r.with_guessed_format())
            .map_err(image::ImageError::from)
            .and_then(|r| r.into_dimensions());
        let (included, notes) = match readable {
            Err(e) => (false, format!("unreadable: {e}")),
            Ok(_) if excluded.contains(id.as_str()) => (false, NOTE_EXCLUDED.to_string()),
            Ok(_) => (true, String::new()),
        };
        entries.push(ManifestEntry {
            id,
            path,
            included,
            notes,
        });
    }
    for id in &excluded {
        if !ids.contains(*id) {
            warnings.push(format!("exclusion id {id} matches no file"));
        }
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(DatasetManifest { entries, warnings })
}
