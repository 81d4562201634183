//! Seeded random streams. Each consumer (weight init, shuffling, latent
//! noise, interpolation coefficients, ...) draws from its own ChaCha stream
//! derived from the run seed, so adding draws in one place never perturbs
//! another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    GeneratorInit = 1,
    CriticInit = 2,
    Shuffle = 3,
    Latent = 4,
    Interpolation = 5,
    Noise = 6,
    FeatureInit = 7,
    Tsne = 8,
    Synthetic = 9,
    Pool = 10,
}

pub fn stream(seed: u64, which: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(which as u64);
    rng
}
