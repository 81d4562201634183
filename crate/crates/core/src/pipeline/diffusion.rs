use serde::{Deserialize, Serialize};

use super::image::RawImage;
use super::transform::quantize;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Conductance {
    /// `exp(−(d/κ)²)`
    Exponential,
    /// `1 / (1 + (d/κ)²)`
    Rational,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ADParams {
    pub iterations: usize,
    pub dt: f64,
    pub kappa: f64,
    pub conductance: Conductance,
}

impl Default for ADParams {
    fn default() -> Self {
        Self {
            iterations: 20,
            dt: 0.15,
            kappa: 15.0,
            conductance: Conductance::Exponential,
        }
    }
}

impl ADParams {
    /// The explicit 4-neighbor update is stable for `dt <= 0.25`.
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt <= 0.25) {
            return Err(Error::Config(format!("diffusion dt must lie in (0, 0.25], got {}", self.dt)));
        }
        if !(self.kappa > 0.0) {
            return Err(Error::Config(format!("diffusion kappa must be positive, got {}", self.kappa)));
        }
        Ok(())
    }

    fn g(&self, d: f64) -> f64 {
        let r = d / self.kappa;
        match self.conductance {
            Conductance::Exponential => (-r * r).exp(),
            Conductance::Rational => 1.0 / (1.0 + r * r),
        }
    }
}

/// Real-valued Perona–Malik state. Boundaries reflect, so no intensity
/// flows across the image border.
#[derive(Debug, Clone)]
pub struct Diffusion {
    width: usize,
    height: usize,
    field: Vec<f64>,
    next: Vec<f64>,
    params: ADParams,
}

impl Diffusion {
    pub fn new(img: &RawImage, params: ADParams) -> Result<Self> {
        let field = img.pixels().iter().map(|&v| f64::from(v)).collect();
        Self::from_field(img.width(), img.height(), field, params)
    }

    pub fn from_field(width: usize, height: usize, field: Vec<f64>, params: ADParams) -> Result<Self> {
        params.validate()?;
        if width == 0 || height == 0 || field.len() != width * height {
            return Err(Error::Dimension(format!(
                "{} values for a {width}x{height} field",
                field.len()
            )));
        }
        Ok(Self {
            width,
            height,
            next: vec![0.0; field.len()],
            field,
            params,
        })
    }

    pub fn field(&self) -> &[f64] {
        &self.field
    }

    pub fn mean(&self) -> f64 {
        self.field.iter().sum::<f64>() / self.field.len() as f64
    }

    pub fn total_variation(&self) -> f64 {
        total_variation(&self.field, self.width, self.height)
    }

    /// One explicit update `I += dt · Σ_dir g(|∇I|)·∇I` over the four neighbors.
    pub fn step(&mut self) {
        let (w, h) = (self.width, self.height);
        let f = &self.field;
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                let c = f[i];
                let mut flux = 0.0;
                // a missing neighbor reflects onto the pixel itself, giving zero difference
                let neighbors = [
                    (y > 0).then(|| i - w),
                    (y + 1 < h).then(|| i + w),
                    (x > 0).then(|| i - 1),
                    (x + 1 < w).then(|| i + 1),
                ];
                for j in neighbors.into_iter().flatten() {
                    let d = f[j] - c;
                    flux += self.params.g(d.abs()) * d;
                }
                self.next[i] = c + self.params.dt * flux;
            }
        }
        std::mem::swap(&mut self.field, &mut self.next);
    }

    pub fn run(&mut self, iterations: usize) {
        for _ in 0..iterations {
            self.step();
        }
    }

    pub fn to_image(&self) -> Result<RawImage> {
        RawImage::new(self.width, self.height, self.field.iter().map(|&v| quantize(v)).collect())
    }
}

/// Sum of absolute horizontal and vertical neighbor differences.
pub fn total_variation(field: &[f64], width: usize, height: usize) -> f64 {
    let mut tv = 0.0;
    for y in 0..height {
        for x in 0..width {
            let i = y * width + x;
            if x + 1 < width {
                tv += (field[i + 1] - field[i]).abs();
            }
            if y + 1 < height {
                tv += (field[i + width] - field[i]).abs();
            }
        }
    }
    tv
}

/// Runs `params.iterations` steps and re-quantizes once at the end.
pub fn anisotropic_diffusion(img: &RawImage, params: &ADParams) -> Result<RawImage> {
    let mut d = Diffusion::new(img, *params)?;
    d.run(params.iterations);
    Ok(d.to_image()?.with_source_of(img))
}

impl RawImage {
    pub(crate) fn with_source_of(self, other: &RawImage) -> Self {
        match other.source() {
            Some(p) => self.with_source(p),
            None => self,
        }
    }
}
