//! HTTP front end for the session service. Every handler runs the blocking
//! service call on the blocking pool and maps service errors to 4xx or 5xx
//! responses with a `{code, message}` body.

use std::future::Future;
use std::sync::Arc;

use axum::extract::rejection::{JsonRejection, PathRejection};
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use dsi_core::metrics::StepRanking;
use dsi_core::session::{IndexEntry, SessionError, SessionService, SessionSummary, StepRecord};
use dsi_core::translator::SceneExport;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

/// An error response.
#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        ApiError { status, body: ErrorBody { code: code.into(), message: message.into() } }
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        let status = match &e {
            SessionError::UnknownDomain(_) | SessionError::UnknownSession(_) | SessionError::UnknownStep(_) => {
                StatusCode::NOT_FOUND
            }
            SessionError::SessionComplete { .. } => StatusCode::CONFLICT,
            SessionError::InvalidRank(_) | SessionError::EmptyInstruction => StatusCode::UNPROCESSABLE_ENTITY,
            SessionError::Registry(_) | SessionError::Io(_) | SessionError::Corrupt(_) => {
                log::error!("{e}");
                StatusCode::INTERNAL_SERVER_ERROR
            }
        };
        ApiError::new(status, e.code(), e.to_string())
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, "bad_request", e.body_text())
    }
}

impl From<PathRejection> for ApiError {
    fn from(e: PathRejection) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, "bad_request", e.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

#[derive(Debug, Deserialize)]
pub struct CreateRequest {
    pub domain: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CreateResponse {
    pub session_id: String,
}

#[derive(Debug, Deserialize)]
pub struct StepRequest {
    pub instruction: String,
}

#[derive(Debug, Deserialize)]
pub struct RankingRequest {
    pub ranks: IndexMap<String, u32>,
    #[serde(default)]
    pub partial: bool,
}

pub fn router(svc: Arc<SessionService>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/v1/domains", get(domains))
        .route("/v1/sessions", post(create).get(list))
        .route("/v1/sessions/{id}", get(summary))
        .route("/v1/sessions/{id}/steps", post(step))
        .route("/v1/sessions/{id}/steps/{n}/ranking", post(rank))
        .route("/v1/sessions/{id}/history", get(history))
        .route("/v1/sessions/{id}/scene/{n}", get(scene))
        .with_state(svc)
}

/// Serves `router(svc)` on `listener` until `shutdown` resolves. In-flight
/// requests finish before this returns, so a step is never cut off halfway.
pub async fn serve(
    listener: tokio::net::TcpListener,
    svc: Arc<SessionService>,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(svc)).with_graceful_shutdown(shutdown).await
}

async fn blocking<T, F>(svc: Arc<SessionService>, f: F) -> ApiResult<T>
where
    T: Send + 'static,
    F: FnOnce(&SessionService) -> Result<T, SessionError> + Send + 'static,
{
    match tokio::task::spawn_blocking(move || f(&svc)).await {
        Ok(r) => Ok(Json(r?)),
        Err(e) => Err(ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string())),
    }
}

async fn health() -> Json<serde_json::Value> {
    Json(serde_json::json!({"status": "ok"}))
}

async fn domains(State(svc): State<Arc<SessionService>>) -> Json<Vec<String>> {
    Json(svc.domains())
}

async fn create(
    State(svc): State<Arc<SessionService>>,
    body: Result<Json<CreateRequest>, JsonRejection>,
) -> Result<(StatusCode, Json<CreateResponse>), ApiError> {
    let Json(req) = body?;
    let Json(session_id) = blocking(svc, move |s| s.create_session(&req.domain)).await?;
    Ok((StatusCode::CREATED, Json(CreateResponse { session_id })))
}

async fn list(State(svc): State<Arc<SessionService>>) -> ApiResult<Vec<IndexEntry>> {
    blocking(svc, |s| s.list()).await
}

async fn summary(State(svc): State<Arc<SessionService>>, Path(id): Path<String>) -> ApiResult<SessionSummary> {
    blocking(svc, move |s| s.summary(&id)).await
}

async fn step(
    State(svc): State<Arc<SessionService>>,
    Path(id): Path<String>,
    body: Result<Json<StepRequest>, JsonRejection>,
) -> ApiResult<StepRecord> {
    let Json(req) = body?;
    blocking(svc, move |s| s.step(&id, &req.instruction)).await
}

async fn rank(
    State(svc): State<Arc<SessionService>>,
    path: Result<Path<(String, u32)>, PathRejection>,
    body: Result<Json<RankingRequest>, JsonRejection>,
) -> ApiResult<StepRanking> {
    let Path((id, n)) = path?;
    let Json(req) = body?;
    blocking(svc, move |s| s.rank_step(&id, n, req.ranks, req.partial)).await
}

async fn history(State(svc): State<Arc<SessionService>>, Path(id): Path<String>) -> ApiResult<Vec<StepRecord>> {
    blocking(svc, move |s| s.history(&id)).await
}

async fn scene(
    State(svc): State<Arc<SessionService>>,
    path: Result<Path<(String, u32)>, PathRejection>,
) -> ApiResult<SceneExport> {
    let Path((id, n)) = path?;
    blocking(svc, move |s| s.scene(&id, n)).await
}
