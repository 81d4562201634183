//! Objective evaluation: pluggable feature extraction, Fréchet distance
//! between fitted Gaussians, and exact t-SNE.

mod features;
mod fid;
mod tsne;

pub use features::{extract_features, Extractor, FeatureSet, RandomConvExtractor, Source, RANDOM_CONV_DIM};
pub use fid::{fid_report, fit_gaussian, frechet_distance, matrix_sqrt_psd, write_fid_csv, FidRow, GaussianStats};
pub use tsne::{
    joint_probabilities, perplexity_calibrate, tsne_embed, write_embedding_csv, TsneConfig, TsneResult, MAX_POINTS,
};
