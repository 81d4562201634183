//! Procedural stand-ins for panoramic crops: a dark background, a bright
//! curved band with a row of tooth-like blobs, and mild sensor noise.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::image::RawImage;
use super::transform::quantize;
use crate::error::Result;
use crate::rng::{stream, Stream};

pub fn synthetic_radiograph(size: usize, rng: &mut impl Rng) -> Result<RawImage> {
    let s = size as f64;
    let background = rng.random_range(25.0..55.0);
    let gradient = rng.random_range(-20.0..20.0);
    let curvature = rng.random_range(0.6..1.4);
    let center_y = rng.random_range(0.45..0.60) * s;
    let band_width = rng.random_range(0.06..0.10) * s;
    let band_level = rng.random_range(90.0..130.0);
    let teeth = rng.random_range(6..11usize);
    let tooth_level = rng.random_range(60.0..100.0);
    let tooth_rx = rng.random_range(0.035..0.05) * s;
    let tooth_ry = rng.random_range(0.12..0.18) * s;
    let noise = Normal::new(0.0, rng.random_range(3.0..8.0)).expect("positive sigma");

    let arc = |x: f64| {
        let u = (x - s / 2.0) / (s / 2.0);
        center_y - curvature * 0.25 * s * (1.0 - u * u)
    };
    let tooth_x: Vec<f64> = (0..teeth)
        .map(|k| (k as f64 + 0.5) / teeth as f64 * s + rng.random_range(-0.01..0.01) * s)
        .collect();

    let mut px = Vec::with_capacity(size * size);
    for y in 0..size {
        for x in 0..size {
            let (xf, yf) = (x as f64 + 0.5, y as f64 + 0.5);
            let mut v = background + gradient * yf / s;
            let d = (yf - arc(xf)) / band_width;
            v += band_level * (-0.5 * d * d).exp();
            for &tx in &tooth_x {
                let dx = (xf - tx) / tooth_rx;
                let dy = (yf - (arc(tx) - 0.5 * tooth_ry)) / tooth_ry;
                let r2 = dx * dx + dy * dy;
                if r2 < 4.0 {
                    v += tooth_level * (-r2 * r2).exp();
                }
            }
            v += noise.sample(rng);
            px.push(quantize(v));
        }
    }
    RawImage::new(size, size, px)
}

/// `count` images from the seed's synthetic stream.
pub fn synthetic_dataset(count: usize, size: usize, seed: u64) -> Result<Vec<RawImage>> {
    let mut rng = stream(seed, Stream::Synthetic);
    (0..count).map(|_| synthetic_radiograph(size, &mut rng)).collect()
}
