//! Image ingestion and preprocessing.

mod diffusion;
mod image;
mod manifest;
mod noise;
pub mod synthetic;
mod transform;

pub use self::image::RawImage;
pub use diffusion::{anisotropic_diffusion, total_variation, ADParams, Conductance, Diffusion};
pub use manifest::{build_manifest, read_exclude_list, DatasetManifest, ManifestEntry, NOTE_EXCLUDED};
pub use noise::gaussian_noise_image;
pub use transform::{crop_bottom_center, denormalize, normalize_grayscale, quantize, resize_bilinear, CropSpec};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocConfig {
    pub crop: CropSpec,
    pub output_width: usize,
    pub output_height: usize,
    /// Anisotropic diffusion applied after resizing; `None` skips it.
    pub denoise: Option<ADParams>,
}

impl Default for PreprocConfig {
    fn default() -> Self {
        Self {
            crop: CropSpec::default(),
            output_width: 256,
            output_height: 256,
            denoise: None,
        }
    }
}

impl PreprocConfig {
    pub fn validate(&self) -> Result<()> {
        self.crop.validate()?;
        if self.output_width == 0 || self.output_height == 0 {
            return Err(Error::Config("output size must be positive".into()));
        }
        if let Some(p) = &self.denoise {
            p.validate()?;
        }
        Ok(())
    }
}

/// Crop, resize and optionally denoise one image.
pub fn preprocess(img: &RawImage, cfg: &PreprocConfig) -> Result<RawImage> {
    cfg.validate()?;
    let cropped = crop_bottom_center(img, &cfg.crop)?;
    let mut out = resize_bilinear(&cropped, cfg.output_width, cfg.output_height)?;
    if let Some(p) = &cfg.denoise {
        out = anisotropic_diffusion(&out, p)?;
    }
    Ok(out.with_source_of(img))
}
