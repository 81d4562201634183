use std::future::Future;
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Request, State};
use axum::http::{header, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;

use crate::error::{Result, ServiceError};
use crate::pool::PoolConfig;
use crate::service::{RatingService, SessionRequest};
use crate::session::ScoreInput;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScoreBody {
    image_id: String,
    scores: ScoreInput,
}

/// Runs blocking service work (file I/O, fsync, PNG codecs) off the async
/// workers.
async fn blocking<T, F>(svc: Arc<RatingService>, f: F) -> Result<T>
where
    T: Send + 'static,
    F: FnOnce(&RatingService) -> Result<T> + Send + 'static,
{
    tokio::task::spawn_blocking(move || f(&svc))
        .await
        .map_err(|e| ServiceError::Internal(e.to_string()))?
}

fn body<T>(payload: std::result::Result<Json<T>, JsonRejection>) -> Result<T> {
    match payload {
        Ok(Json(v)) => Ok(v),
        Err(JsonRejection::JsonDataError(e)) => Err(ServiceError::validation(e.body_text())),
        Err(e) => Err(ServiceError::BadRequest(e.body_text())),
    }
}

async fn create_pool(
    State(svc): State<Arc<RatingService>>,
    payload: std::result::Result<Json<PoolConfig>, JsonRejection>,
) -> Result<Response> {
    let cfg = body(payload)?;
    let summary = blocking(svc, move |s| s.create_pool(cfg)).await?;
    Ok((StatusCode::CREATED, Json(summary)).into_response())
}

async fn create_session(
    State(svc): State<Arc<RatingService>>,
    payload: std::result::Result<Json<SessionRequest>, JsonRejection>,
) -> Result<Response> {
    let req = body(payload)?;
    let view = blocking(svc, move |s| s.create_session(req)).await?;
    Ok((StatusCode::CREATED, Json(view)).into_response())
}

async fn get_session(State(svc): State<Arc<RatingService>>, Path(id): Path<String>) -> Result<Response> {
    let view = blocking(svc, move |s| s.session_view(&id)).await?;
    Ok(Json(view).into_response())
}

async fn next_batch(State(svc): State<Arc<RatingService>>, Path(id): Path<String>) -> Result<Response> {
    let batch = blocking(svc, move |s| s.next_batch(&id)).await?;
    Ok(Json(batch).into_response())
}

async fn submit_scores(
    State(svc): State<Arc<RatingService>>,
    Path(id): Path<String>,
    payload: std::result::Result<Json<ScoreBody>, JsonRejection>,
) -> Result<Response> {
    let b = body(payload)?;
    let ack = blocking(svc, move |s| s.submit(&id, &b.image_id, &b.scores)).await?;
    Ok((StatusCode::CREATED, Json(ack)).into_response())
}

async fn image(State(svc): State<Arc<RatingService>>, Path(id): Path<String>) -> Result<Response> {
    let png = blocking(svc, move |s| s.image_png(&id)).await?;
    Ok(([(header::CONTENT_TYPE, "image/png")], png).into_response())
}

async fn export(State(svc): State<Arc<RatingService>>, Path(id): Path<String>) -> Result<Response> {
    let out = blocking(svc, move |s| s.export(&id)).await?;
    Ok(([(header::CONTENT_TYPE, "text/csv; charset=utf-8")], out.csv).into_response())
}

async fn require_token(State(svc): State<Arc<RatingService>>, req: Request, next: Next) -> Response {
    if let Some(token) = svc.token() {
        let presented = req
            .headers()
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "));
        if presented != Some(token) {
            return ServiceError::Unauthorized.into_response();
        }
    }
    next.run(req).await
}

async fn fallback() -> ServiceError {
    ServiceError::NotFound("no such route".into())
}

pub fn router(svc: Arc<RatingService>) -> Router {
    Router::new()
        .route("/pools", post(create_pool))
        .route("/pools/{id}/export", get(export))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/next-batch", get(next_batch))
        .route("/sessions/{id}/scores", post(submit_scores))
        .route("/images/{id}", get(image))
        .fallback(fallback)
        .layer(middleware::from_fn_with_state(svc.clone(), require_token))
        .with_state(svc)
}

/// Serves the API on `listener` until `shutdown` resolves.
pub async fn serve(
    listener: tokio::net::TcpListener,
    svc: Arc<RatingService>,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(svc)).with_graceful_shutdown(shutdown).await
}
