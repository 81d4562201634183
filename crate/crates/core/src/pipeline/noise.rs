use rand_distr::{Distribution, Normal};

use super::image::RawImage;
use super::transform::quantize;
use crate::error::{Error, Result};
use crate::rng::{stream, Stream};

/// I.i.d. normal pixels, clamped to [0, 255] and rounded.
pub fn gaussian_noise_image(width: usize, height: usize, mu: f64, sigma: f64, seed: u64) -> Result<RawImage> {
    if !(sigma > 0.0) {
        return Err(Error::Config(format!("noise sigma must be positive, got {sigma}")));
    }
    let dist = Normal::new(mu, sigma).map_err(|e| Error::Config(e.to_string()))?;
    let mut rng = stream(seed, Stream::Noise);
    let px = (0..width * height).map(|_| quantize(dist.sample(&mut rng))).collect();
    RawImage::new(width, height, px)
}
