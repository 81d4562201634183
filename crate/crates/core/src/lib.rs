//! Synthetic dental panoramic radiograph workbench.
//!
//! * [`nets`]: DCGAN-style generator (transposed conv, batch norm, ReLU,
//!   tanh) and critic (conv, instance norm, leaky ReLU) with checkpoints.
//! * [`train`]: WGAN-GP objective, Adam, the critic-iteration schedule and a
//!   1-D exact Wasserstein oracle.
//! * [`pipeline`]: PNG ingestion, bottom-center cropping, resizing,
//!   normalization, anisotropic diffusion and dataset screening manifests.
//! * [`metrics`]: pluggable feature extraction, Fréchet distance and exact t-SNE.
//! * [`stats`]: expert score aggregation, Kruskal–Wallis and Dunn's test.

pub mod error;
pub mod metrics;
pub mod nets;
pub mod pipeline;
pub mod rng;
pub mod stats;
pub mod train;

pub use error::{Error, Result};
