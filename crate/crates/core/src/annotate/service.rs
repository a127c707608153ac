//! HTTP+JSON front of a [`Desk`].
//!
//! ```text
//! GET  /api/next?annotator=<id>     200 TaskView, or 204 when nothing is left
//! POST /api/annotations             {"image_id", "annotator", "category"}
//! GET  /api/image/<id>/crop.png     face crop shown to annotators
//! GET  /api/stats                   agreement and progress summary
//! GET  /api/progress?annotator=<id>
//! GET  /                            static UI bundle, when configured
//! ```
//!
//! Errors are `{"error": <kind>, "detail": <message>}`. `category` accepts a
//! snake-case name or an integer code.

use std::collections::HashMap;
use std::future::IntoFuture;
use std::net::SocketAddr;
use std::path::{Component, Path, PathBuf};
use std::sync::{Arc, Mutex};

use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use super::{agreement_stats, query_confusion, AgreementStats, Desk, Progress, QueryConfusion, SubmitOutcome};
use crate::error::Error;
use crate::facegate::CropOptions;
use crate::taxonomy::AnnotationCategory;

#[derive(Debug, Clone)]
pub struct ServiceOptions {
    pub crop: CropOptions,
    /// Directory holding `index.html` and its assets.
    pub static_dir: Option<PathBuf>,
}

impl Default for ServiceOptions {
    fn default() -> Self {
        ServiceOptions {
            crop: CropOptions { out_size: 192, margin: 0.25, grayscale: false, align_eyes: false },
            static_dir: None,
        }
    }
}

struct AppState {
    desk: Mutex<Desk>,
    options: ServiceOptions,
}

type Shared = Arc<AppState>;

pub struct ApiError {
    status: StatusCode,
    kind: &'static str,
    detail: String,
}

impl ApiError {
    fn bad_request(detail: impl Into<String>) -> Self {
        ApiError { status: StatusCode::BAD_REQUEST, kind: "bad_request", detail: detail.into() }
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let (status, kind) = match &e {
            Error::UnknownImage(_) => (StatusCode::NOT_FOUND, "unknown_image"),
            Error::UnknownLabel(_) | Error::Invalid(_) => (StatusCode::BAD_REQUEST, "bad_request"),
            Error::Conflict(_) => (StatusCode::CONFLICT, "conflict"),
            Error::NotReady(_) => (StatusCode::CONFLICT, "not_ready"),
            _ => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        };
        ApiError { status, kind, detail: e.to_string() }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = serde_json::json!({ "error": self.kind, "detail": self.detail });
        (self.status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubmitRequest {
    pub image_id: String,
    pub annotator: String,
    pub category: serde_json::Value,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubmitResponse {
    pub image_id: String,
    pub category: AnnotationCategory,
    pub outcome: SubmitOutcome,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StatsResponse {
    pub batch_size: usize,
    pub fully_annotated: usize,
    pub agreement: AgreementStats,
    pub query_confusion: QueryConfusion,
}

fn annotator_param(q: &HashMap<String, String>) -> ApiResult<&str> {
    q.get("annotator")
        .map(String::as_str)
        .ok_or_else(|| ApiError::bad_request("missing query parameter `annotator`"))
}

fn parse_category(v: &serde_json::Value) -> ApiResult<AnnotationCategory> {
    let parsed = match v {
        serde_json::Value::Number(n) => n
            .as_u64()
            .and_then(|c| AnnotationCategory::from_code(c as usize))
            .ok_or_else(|| Error::UnknownLabel(n.to_string())),
        serde_json::Value::String(s) => s.parse(),
        other => Err(Error::UnknownLabel(other.to_string())),
    };
    Ok(parsed?)
}

async fn next_task(State(state): State<Shared>, Query(q): Query<HashMap<String, String>>) -> ApiResult<Response> {
    let annotator = annotator_param(&q)?;
    let task = state.desk.lock().unwrap().assign_next(annotator)?;
    Ok(match task {
        Some(view) => Json(view).into_response(),
        None => StatusCode::NO_CONTENT.into_response(),
    })
}

async fn submit(State(state): State<Shared>, body: Result<Json<SubmitRequest>, axum::extract::rejection::JsonRejection>) -> ApiResult<Json<SubmitResponse>> {
    let Json(req) = body.map_err(|e| ApiError::bad_request(e.body_text()))?;
    let category = parse_category(&req.category)?;
    let outcome = state.desk.lock().unwrap().submit(&req.image_id, &req.annotator, category)?;
    Ok(Json(SubmitResponse { image_id: req.image_id, category, outcome }))
}

async fn crop(State(state): State<Shared>, UrlPath(id): UrlPath<String>) -> ApiResult<Response> {
    let png = state.desk.lock().unwrap().crop_png(&id, &state.options.crop)?;
    Ok(([(header::CONTENT_TYPE, "image/png")], png).into_response())
}

async fn stats(State(state): State<Shared>) -> Json<StatsResponse> {
    let desk = state.desk.lock().unwrap();
    let records: Vec<_> = desk
        .batch()
        .image_ids
        .iter()
        .filter_map(|id| desk.catalog().get(id).cloned())
        .collect();
    Json(StatsResponse {
        batch_size: desk.batch().len(),
        fully_annotated: records.iter().filter(|r| r.annotations.len() >= 2).count(),
        agreement: agreement_stats(&records),
        query_confusion: query_confusion(&records),
    })
}

async fn progress(State(state): State<Shared>, Query(q): Query<HashMap<String, String>>) -> ApiResult<Json<Progress>> {
    let annotator = annotator_param(&q)?;
    Ok(Json(state.desk.lock().unwrap().progress(annotator)?))
}

fn content_type(path: &Path) -> &'static str {
    match path.extension().and_then(|e| e.to_str()) {
        Some("html") => "text/html; charset=utf-8",
        Some("js") => "text/javascript",
        Some("css") => "text/css",
        Some("json") => "application/json",
        Some("svg") => "image/svg+xml",
        Some("png") => "image/png",
        _ => "application/octet-stream",
    }
}

async fn static_file(state: &AppState, rel: &str) -> ApiResult<Response> {
    let not_found = || ApiError { status: StatusCode::NOT_FOUND, kind: "not_found", detail: format!("/{rel}") };
    let Some(dir) = &state.options.static_dir else {
        if rel == "index.html" {
            let page = "<!doctype html><title>wildlabel</title><p>UI bundle not installed. The JSON API lives under /api/.</p>";
            return Ok(([(header::CONTENT_TYPE, "text/html; charset=utf-8")], page).into_response());
        }
        return Err(not_found());
    };
    let rel_path = Path::new(rel);
    if rel_path.components().any(|c| !matches!(c, Component::Normal(_))) {
        return Err(not_found());
    }
    let path = dir.join(rel_path);
    let bytes = std::fs::read(&path).map_err(|_| not_found())?;
    Ok(([(header::CONTENT_TYPE, content_type(&path))], bytes).into_response())
}

async fn index(State(state): State<Shared>) -> ApiResult<Response> {
    static_file(&state, "index.html").await
}

async fn asset(State(state): State<Shared>, UrlPath(rel): UrlPath<String>) -> ApiResult<Response> {
    static_file(&state, &rel).await
}

pub fn router(desk: Desk, options: ServiceOptions) -> Router {
    let state = Arc::new(AppState { desk: Mutex::new(desk), options });
    router_with_state(state)
}

fn router_with_state(state: Shared) -> Router {
    Router::new()
        .route("/api/next", get(next_task))
        .route("/api/annotations", post(submit))
        .route("/api/image/{id}/crop.png", get(crop))
        .route("/api/stats", get(stats))
        .route("/api/progress", get(progress))
        .route("/", get(index))
        .route("/{*path}", get(asset))
        .with_state(state)
}

/// Serves until the process is interrupted.
pub async fn serve(listener: tokio::net::TcpListener, desk: Desk, options: ServiceOptions) -> std::io::Result<()> {
    axum::serve(listener, router(desk, options)).await
}

/// A service running on a background thread, for tests and embedding.
pub struct BackgroundService {
    addr: SocketAddr,
    state: Shared,
    shutdown: Option<tokio::sync::oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<std::io::Result<()>>>,
}

impl BackgroundService {
    pub fn start(addr: SocketAddr, desk: Desk, options: ServiceOptions) -> std::io::Result<Self> {
        let runtime = tokio::runtime::Builder::new_multi_thread().worker_threads(2).enable_all().build()?;
        let listener = runtime.block_on(tokio::net::TcpListener::bind(addr))?;
        let addr = listener.local_addr()?;
        let state = Arc::new(AppState { desk: Mutex::new(desk), options });
        let app = router_with_state(state.clone());
        let (tx, rx) = tokio::sync::oneshot::channel::<()>();
        let thread = std::thread::spawn(move || {
            // Hard stop: pooled keep-alive clients would stall a graceful one.
            let result = runtime.block_on(async move {
                tokio::select! {
                    r = axum::serve(listener, app).into_future() => r,
                    _ = rx => Ok(()),
                }
            });
            // Drops open connection tasks, and with them their state handles.
            runtime.shutdown_timeout(std::time::Duration::from_secs(2));
            result
        });
        Ok(BackgroundService { addr, state, shutdown: Some(tx), thread: Some(thread) })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self, path: &str) -> String {
        format!("http://{}{path}", self.addr)
    }

    /// Stops the server and hands back the desk.
    pub fn stop(mut self) -> std::io::Result<Desk> {
        self.halt()?;
        let state = self.state.clone();
        drop(self);
        let state = Arc::try_unwrap(state).map_err(|_| std::io::Error::other("service state still shared"))?;
        Ok(state.desk.into_inner().unwrap())
    }

    fn halt(&mut self) -> std::io::Result<()> {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        match self.thread.take() {
            Some(t) => t.join().map_err(|_| std::io::Error::other("service thread panicked"))?,
            None => Ok(()),
        }
    }
}

impl Drop for BackgroundService {
    fn drop(&mut self) {
        let _ = self.halt();
    }
}
