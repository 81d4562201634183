//! WGAN-GP objective, optimizer and training loop.

mod adam;
pub mod calibration;
mod config;
mod dataset;
mod loss;
mod trainer;
mod wasserstein;

pub use adam::{adam_step, AdamConfig, OptimizerState};
pub use config::{ModelPreset, TrainConfig};
pub use dataset::{EpochSampler, TrainingSet};
pub use loss::{
    critic_loss, critic_loss_at, generator_loss, gradient_penalty, gradient_penalty_at, interpolate_samples,
    sample_interpolation_weights, CriticLoss, GP_NORM_EPS,
};
pub use trainer::{
    run_training, RunSnapshot, TrainLog, TrainOutcome, TrainRecord, CONFIG_FILE, FINAL_CHECKPOINT, LOG_FILE,
};
pub use wasserstein::wasserstein1d_exact;
