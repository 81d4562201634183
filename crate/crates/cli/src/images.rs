use std::path::Path;

use anyhow::{Context, Result};
use pano_core::pipeline::RawImage;

use crate::error::UsageError;

/// PNG files directly inside `dir`, in file-name order, with their stems.
pub fn load_png_dir(dir: &Path) -> Result<Vec<(String, RawImage)>> {
    let mut paths = Vec::new();
    for entry in std::fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let path = entry?.path();
        let is_png = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("png"));
        if path.is_file() && is_png {
            paths.push(path);
        }
    }
    if paths.is_empty() {
        return Err(UsageError(format!("{} contains no PNG images", dir.display())).into());
    }
    paths.sort_by(|a, b| a.file_name().cmp(&b.file_name()));
    paths
        .into_iter()
        .map(|p| {
            let stem = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            let img = RawImage::load(&p).with_context(|| format!("loading {}", p.display()))?;
            Ok((stem, img))
        })
        .collect()
}

/// Splits `NAME=VALUE`; names are restricted so they can appear unquoted in
/// CSV output.
pub fn named_arg(raw: &str) -> Result<(String, String)> {
    let (name, value) = raw
        .split_once('=')
        .ok_or_else(|| UsageError(format!("expected NAME=PATH, got '{raw}'")))?;
    let ok = !name.is_empty() && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-');
    if !ok || value.is_empty() {
        return Err(UsageError(format!("bad NAME=PATH argument '{raw}' (names use letters, digits, _ and -)")).into());
    }
    Ok((name.to_string(), value.to_string()))
}

pub fn create_out_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}
