//! HTTP API: completions, session logging, export, study plans and health.

use std::sync::Arc;
use std::time::Instant;

use axum::extract::{Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use kwcomplete::service::{CompletionRequest, Model, SessionRecord, SessionStore, TaskKind};
use kwcomplete::Error;
use serde::{Deserialize, Serialize};
use serde_json::json;

pub struct AppState {
    pub model: Model,
    pub store: Arc<dyn SessionStore>,
    /// Candidate target sentences for study plans.
    pub targets: Vec<String>,
    pub started: Instant,
}

impl AppState {
    pub fn new(model: Model, store: Arc<dyn SessionStore>, targets: Vec<String>) -> Self {
        AppState { model, store, targets, started: Instant::now() }
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/complete", post(complete))
        .route("/sessions", post(log_session))
        .route("/sessions/export", get(export))
        .route("/sessions/plan", get(plan))
        .route("/health", get(health))
        .with_state(state)
}

/// JSON error body: `{"error": ..., "kind": ..., "retryable": ...}`.
pub struct ApiError(pub Error);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, kind, retryable) = match &self.0 {
            Error::Validation(_) => (StatusCode::BAD_REQUEST, "validation", false),
            Error::StoreUnavailable(_) => (StatusCode::SERVICE_UNAVAILABLE, "store_unavailable", true),
            _ => (StatusCode::INTERNAL_SERVER_ERROR, "internal", false),
        };
        (status, Json(json!({ "error": self.0.to_string(), "kind": kind, "retryable": retryable }))).into_response()
    }
}

async fn complete(State(state): State<Arc<AppState>>, Json(request): Json<CompletionRequest>) -> Result<Response, ApiError> {
    let worker = state.clone();
    let response = tokio::task::spawn_blocking(move || worker.model.complete(&request))
        .await
        .map_err(|e| ApiError(Error::Validation(format!("completion task failed: {e}"))))?
        .map_err(ApiError)?;
    if response.latency_ms > 200.0 {
        log::warn!("completion took {:.1} ms", response.latency_ms);
    }
    Ok(Json(response).into_response())
}

async fn log_session(State(state): State<Arc<AppState>>, Json(record): Json<SessionRecord>) -> Result<Response, ApiError> {
    let store = state.store.clone();
    let id = record.session_id.clone();
    tokio::task::spawn_blocking(move || store.append(&record))
        .await
        .map_err(|e| ApiError(Error::StoreUnavailable(e.to_string())))?
        .map_err(ApiError)?;
    Ok((StatusCode::CREATED, Json(json!({ "ok": true, "session_id": id }))).into_response())
}

async fn export(State(state): State<Arc<AppState>>) -> Result<Response, ApiError> {
    let body = state.store.export().map_err(ApiError)?;
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], body).into_response())
}

#[derive(Debug, Deserialize)]
pub struct PlanQuery {
    pub session_id: String,
    #[serde(default = "default_tasks")]
    pub tasks: usize,
}

fn default_tasks() -> usize {
    50
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlannedTask {
    pub index: usize,
    pub task: TaskKind,
    pub target: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionPlan {
    pub session_id: String,
    pub tasks: Vec<PlannedTask>,
}

/// Alternates autocomplete and writing tasks over targets chosen deterministically from the session id.
pub fn session_plan(targets: &[String], session_id: &str, tasks: usize) -> kwcomplete::Result<SessionPlan> {
    if session_id.trim().is_empty() {
        return Err(Error::Validation("session_id must not be empty".into()));
    }
    if targets.is_empty() {
        return Err(Error::Validation("the server has no target sentences".into()));
    }
    // FNV-1a offset so each session sees a different but reproducible slice.
    let mut h: u64 = 0xcbf29ce484222325;
    for b in session_id.bytes() {
        h = (h ^ b as u64).wrapping_mul(0x100000001b3);
    }
    let offset = (h % targets.len() as u64) as usize;
    let tasks = (0..tasks)
        .map(|i| PlannedTask {
            index: i,
            task: if i % 2 == 0 { TaskKind::Autocomplete } else { TaskKind::Writing },
            target: targets[(offset + i) % targets.len()].clone(),
        })
        .collect();
    Ok(SessionPlan { session_id: session_id.to_string(), tasks })
}

async fn plan(State(state): State<Arc<AppState>>, Query(q): Query<PlanQuery>) -> Result<Response, ApiError> {
    if q.tasks == 0 || q.tasks > 1000 {
        return Err(ApiError(Error::Validation("tasks must lie in 1..=1000".into())));
    }
    let plan = session_plan(&state.targets, &q.session_id, q.tasks).map_err(ApiError)?;
    Ok(Json(plan).into_response())
}

async fn health(State(state): State<Arc<AppState>>) -> Json<serde_json::Value> {
    Json(json!({
        "status": "ok",
        "model_fingerprint": state.model.fingerprint(),
        "uptime_s": state.started.elapsed().as_secs_f64(),
    }))
}

pub async fn serve(state: Arc<AppState>, addr: std::net::SocketAddr) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
