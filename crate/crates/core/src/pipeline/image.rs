use std::path::{Path, PathBuf};

use image::{DynamicImage, GrayImage};

use crate::error::{Error, Result};

/// 8-bit grayscale image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
    source: Option<PathBuf>,
}

impl RawImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Dimension(format!("image extent {width}x{height} must be positive")));
        }
        if pixels.len() != width * height {
            return Err(Error::Dimension(format!(
                "{} pixels for a {width}x{height} image",
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
            source: None,
        })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn with_source(mut self, path: impl Into<PathBuf>) -> Self {
        self.source = Some(path.into());
        self
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn source(&self) -> Option<&Path> {
        self.source.as_deref()
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    /// Loads a PNG as 8-bit grayscale. 16-bit samples are rescaled by
    /// 255/65535 with rounding; color images are converted to luma.
    pub fn load(path: &Path) -> Result<Self> {
        let img = image::ImageReader::open(path)
            .map_err(|e| Error::io(path, e))?
            .with_guessed_format()
            .map_err(|e| Error::io(path, e))?
            .decode()?;
        let (w, h) = (img.width() as usize, img.height() as usize);
        let pixels = match img {
            DynamicImage::ImageLuma16(buf) => buf
                .into_raw()
                .into_iter()
                .map(|v| ((u32::from(v) * 255 + 32767) / 65535) as u8)
                .collect(),
            DynamicImage::ImageLuma8(buf) => buf.into_raw(),
            other => other.to_luma8().into_raw(),
        };
        Ok(Self::new(w, h, pixels)?.with_source(path))
    }

    /// Writes an 8-bit grayscale PNG.
    pub fn save(&self, path: &Path) -> Result<()> {
        let buf = GrayImage::from_raw(self.width as u32, self.height as u32, self.pixels.clone())
            .ok_or_else(|| Error::Dimension("pixel buffer does not match extent".into()))?;
        buf.save_with_format(path, image::ImageFormat::Png)?;
        Ok(())
    }

    /// Encodes an 8-bit grayscale PNG in memory. The output carries pixels
    /// only, no metadata from the source file.
    pub fn encode_png(&self) -> Result<Vec<u8>> {
        let buf = GrayImage::from_raw(self.width as u32, self.height as u32, self.pixels.clone())
            .ok_or_else(|| Error::Dimension("pixel buffer does not match extent".into()))?;
        let mut out = std::io::Cursor::new(Vec::new());
        buf.write_to(&mut out, image::ImageFormat::Png)?;
        Ok(out.into_inner())
    }
}
