//! Blinded expert rating service.
//!
//! Generated images from several models are pooled under opaque ids and
//! shown in a seeded, model-interleaved order: a familiarization phase
//! first, then scoring batches. Every score is appended to a per-session
//! JSON-lines log and synced before it is acknowledged, and the export
//! restores model ids in the CSV layout the statistics module reads.
//!
//! Routes: `POST /pools`, `POST /sessions`, `GET /sessions/{id}`,
//! `GET /sessions/{id}/next-batch`, `POST /sessions/{id}/scores`,
//! `GET /images/{id}`, `GET /pools/{id}/export`. Errors are JSON objects
//! `{code, message, details}`.

mod api;
mod error;
pub mod pool;
mod service;
pub mod session;

pub use api::{router, serve};
pub use error::{Result, ServiceError};
pub use pool::{PoolConfig, DEFAULT_FAMILIARIZATION, DEFAULT_PER_MODEL};
pub use service::{Export, PoolSummary, RatingService, ServiceConfig, SessionRequest};
pub use session::{Ack, BatchView, ImageRef, Phase, ScoreInput, SessionView, DEFAULT_BATCH_SIZE};

/// Environment variable holding the shared bearer token.
pub const TOKEN_ENV: &str = "PANO_RATING_TOKEN";
