use pano_autodiff::Tensor;
use serde::{Deserialize, Serialize};

use super::image::RawImage;
use crate::error::{Error, Result};

/// Bottom-center crop as fractions of the source extent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CropSpec {
    pub width_fraction: f64,
    pub height_fraction: f64,
    /// Gap between the crop's lower edge and the image bottom.
    pub bottom_margin_fraction: f64,
}

impl Default for CropSpec {
    fn default() -> Self {
        Self {
            width_fraction: 0.70,
            height_fraction: 0.55,
            bottom_margin_fraction: 0.02,
        }
    }
}

impl CropSpec {
    pub fn validate(&self) -> Result<()> {
        let in_unit = |f: f64| f > 0.0 && f <= 1.0;
        if !in_unit(self.width_fraction) || !in_unit(self.height_fraction) {
            return Err(Error::Config(format!("crop fractions must lie in (0,1]: {self:?}")));
        }
        if !(0.0..1.0).contains(&self.bottom_margin_fraction) {
            return Err(Error::Config(format!(
                "bottom margin must lie in [0,1): {}",
                self.bottom_margin_fraction
            )));
        }
        Ok(())
    }

    /// Half-open pixel rectangle `(x0, y0, x1, y1)` for a `width × height` image.
    pub fn rect(&self, width: usize, height: usize) -> Result<(usize, usize, usize, usize)> {
        self.validate()?;
        let (w, h) = (width as f64, height as f64);
        let cw = (self.width_fraction * w).floor();
        let ch = (self.height_fraction * h).floor();
        let x0 = ((w - cw) / 2.0).floor().max(0.0);
        let x1 = (x0 + cw).min(w);
        let y1 = (h * (1.0 - self.bottom_margin_fraction)).round().clamp(0.0, h);
        let y0 = (y1 - ch).max(0.0);
        if x1 <= x0 || y1 <= y0 {
            return Err(Error::Crop(format!(
                "crop {self:?} of a {width}x{height} image is empty"
            )));
        }
        Ok((x0 as usize, y0 as usize, x1 as usize, y1 as usize))
    }
}

pub fn crop_bottom_center(img: &RawImage, spec: &CropSpec) -> Result<RawImage> {
    let (x0, y0, x1, y1) = spec.rect(img.width(), img.height())?;
    let mut px = Vec::with_capacity((x1 - x0) * (y1 - y0));
    for y in y0..y1 {
        let row = y * img.width();
        px.extend_from_slice(&img.pixels()[row + x0..row + x1]);
    }
    RawImage::new(x1 - x0, y1 - y0, px)
}

/// Bilinear resampling with half-pixel centers: output pixel `x` samples
/// source coordinate `(x + 0.5)·in/out − 0.5`, clamped to the border. Results
/// are rounded half up. No antialiasing prefilter.
pub fn resize_bilinear(img: &RawImage, width: usize, height: usize) -> Result<RawImage> {
    if width == 0 || height == 0 {
        return Err(Error::Dimension(format!("resize target {width}x{height} must be positive")));
    }
    if (width, height) == (img.width(), img.height()) {
        return Ok(img.clone());
    }
    let axis = |out: usize, inp: usize| -> Vec<(usize, usize, f64)> {
        (0..out)
            .map(|o| {
                let src = ((o as f64 + 0.5) * inp as f64 / out as f64 - 0.5).clamp(0.0, (inp - 1) as f64);
                let i0 = src.floor() as usize;
                let i1 = (i0 + 1).min(inp - 1);
                (i0, i1, src - i0 as f64)
            })
            .collect()
    };
    let xs = axis(width, img.width());
    let ys = axis(height, img.height());
    let mut px = Vec::with_capacity(width * height);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            let p = |x, y| f64::from(img.get(x, y));
            let top = p(x0, y0) * (1.0 - fx) + p(x1, y0) * fx;
            let bot = p(x0, y1) * (1.0 - fx) + p(x1, y1) * fx;
            let v = top * (1.0 - fy) + bot * fy;
            px.push(quantize(v));
        }
    }
    RawImage::new(width, height, px)
}

/// Rounds half up and clamps to the 8-bit range.
pub fn quantize(v: f64) -> u8 {
    (v + 0.5).floor().clamp(0.0, 255.0) as u8
}

/// Maps 8-bit values to `[1, H, W]` with `v ↦ 2v/255 − 1`.
pub fn normalize_grayscale(img: &RawImage) -> Result<Tensor> {
    let data = img.pixels().iter().map(|&v| 2.0 * f64::from(v) / 255.0 - 1.0).collect();
    Ok(Tensor::new(data, &[1, img.height(), img.width()])?)
}

/// Inverse of [`normalize_grayscale`] for `[1, H, W]` or `[H, W]` tensors;
/// values are clamped to [−1, 1] first.
pub fn denormalize(t: &Tensor) -> Result<RawImage> {
    let s = t.shape();
    let (h, w) = match s {
        [1, h, w] | [h, w] => (*h, *w),
        _ => return Err(Error::Shape(format!("expected [1,H,W] or [H,W], got {s:?}"))),
    };
    let px = t
        .data()
        .iter()
        .map(|&x| quantize((x.clamp(-1.0, 1.0) + 1.0) * 127.5))
        .collect();
    RawImage::new(w, h, px)
}
