//! JSON API over a directory of runs.
//!
//! | Method | Path | Body |
//! |---|---|---|
//! | GET | `/runs` | run list with per-iteration best R2 |
//! | GET | `/runs/{id}` | status and full manifest |
//! | GET | `/runs/{id}/iterations/{k}` | one iteration with its feedback |
//! | GET | `/runs/{id}/plot/{k}` | `image/png` |
//! | POST | `/runs/{id}/feedback` | `{"text": ..., "id"?: ...}` |
//!
//! Reads go straight to the files; feedback writes are serialized.

use std::fs;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use anyhow::Context;
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;
use sindy_agent::orchestrator::{
    AttemptRef, FeedbackEntry, FeedbackError, RunDir, RunManifest, RunState, RunStatus, MANIFEST_FILE,
};
use sindy_core::model::serde_r2;

use crate::config::FileConfig;
use crate::{ServeArgs, DEFAULT_RUNS_DIR};

#[derive(Clone)]
struct AppState {
    root: Arc<PathBuf>,
    feedback_lock: Arc<Mutex<()>>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct IterationView {
    pub iteration: usize,
    pub best: AttemptRef,
    pub best_so_far: AttemptRef,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct RunView {
    pub id: String,
    pub label: String,
    pub ablation: String,
    pub state: RunState,
    pub max_iterations: usize,
    pub iterations: Vec<IterationView>,
    #[serde(with = "serde_r2::option")]
    pub best_r2_test: Option<f64>,
}

#[derive(Debug, Deserialize)]
pub struct FeedbackRequest {
    pub text: String,
    #[serde(default)]
    pub id: Option<String>,
}

struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1 }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn internal(e: impl std::fmt::Display) -> ApiError {
    ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())
}

/// Run ids are single path components made of `[A-Za-z0-9._-]`, not
/// starting with a dot.
pub fn valid_run_id(id: &str) -> bool {
    !id.is_empty()
        && !id.starts_with('.')
        && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-'))
}

fn open_run(state: &AppState, id: &str) -> ApiResult<RunDir> {
    let not_found = || ApiError(StatusCode::NOT_FOUND, format!("no run {id:?}"));
    if !valid_run_id(id) {
        return Err(not_found());
    }
    RunDir::open(state.root.join(id)).map_err(|_| not_found())
}

fn effective_status(dir: &RunDir, m: &RunManifest) -> RunStatus {
    dir.status().unwrap_or_else(|| RunStatus {
        state: if m.is_finished() { RunState::Done } else { RunState::Running },
        iteration: m.iterations.len(),
        max_iterations: m.config.max_iterations,
        message: None,
    })
}

fn view(dir: &RunDir, m: &RunManifest) -> RunView {
    RunView {
        id: dir.id(),
        label: m.config.label.clone(),
        ablation: m.config.ablation.to_string(),
        state: effective_status(dir, m).state,
        max_iterations: m.config.max_iterations,
        iterations: m
            .iterations
            .iter()
            .map(|it| IterationView {
                iteration: it.iteration,
                best: it.best.clone(),
                best_so_far: it.best_so_far.clone(),
            })
            .collect(),
        best_r2_test: m.best_so_far().map(|b| b.score.r2_test),
    }
}

async fn list_runs(State(state): State<AppState>) -> ApiResult<Json<Vec<RunView>>> {
    let mut ids: Vec<String> = match fs::read_dir(state.root.as_ref()) {
        Ok(rd) => rd
            .filter_map(|e| e.ok())
            .filter(|e| e.path().join(MANIFEST_FILE).is_file())
            .map(|e| e.file_name().to_string_lossy().into_owned())
            .filter(|id| valid_run_id(id))
            .collect(),
        Err(_) => Vec::new(),
    };
    ids.sort();
    let mut out = Vec::new();
    for id in ids {
        let Ok(dir) = RunDir::open(state.root.join(&id)) else { continue };
        if let Ok(m) = dir.manifest() {
            out.push(view(&dir, &m));
        }
    }
    Ok(Json(out))
}

async fn get_run(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<serde_json::Value>> {
    let dir = open_run(&state, &id)?;
    let m = dir.manifest().map_err(internal)?;
    let status = effective_status(&dir, &m);
    Ok(Json(json!({
        "id": dir.id(),
        "status": status,
        "summary": dir.summary(),
        "manifest": m,
    })))
}

async fn get_iteration(
    State(state): State<AppState>,
    Path((id, k)): Path<(String, usize)>,
) -> ApiResult<Json<serde_json::Value>> {
    let dir = open_run(&state, &id)?;
    let m = dir.manifest().map_err(internal)?;
    let it = m
        .iterations
        .iter()
        .find(|it| it.iteration == k)
        .ok_or_else(|| ApiError(StatusCode::NOT_FOUND, format!("run {id} has no iteration {k}")))?;
    let feedback: Vec<&FeedbackEntry> = m.feedback.iter().filter(|f| f.iteration == k).map(|f| &f.entry).collect();
    let plot = dir.plot_path(k).is_file().then(|| format!("/runs/{id}/plot/{k}"));
    Ok(Json(json!({
        "id": id,
        "iteration": it,
        "feedback": feedback,
        "plot": plot,
    })))
}

async fn get_plot(State(state): State<AppState>, Path((id, k)): Path<(String, usize)>) -> ApiResult<Response> {
    let dir = open_run(&state, &id)?;
    let bytes = fs::read(dir.plot_path(k))
        .map_err(|_| ApiError(StatusCode::NOT_FOUND, format!("run {id} has no plot for iteration {k}")))?;
    Ok(([(header::CONTENT_TYPE, "image/png")], bytes).into_response())
}

async fn post_feedback(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Json(req): Json<FeedbackRequest>,
) -> ApiResult<(StatusCode, Json<FeedbackEntry>)> {
    let dir = open_run(&state, &id)?;
    let _guard = state.feedback_lock.lock().unwrap_or_else(|p| p.into_inner());
    if dir.manifest().map_err(internal)?.is_finished() {
        return Err(ApiError(StatusCode::CONFLICT, FeedbackError::Finished.to_string()));
    }
    match dir.submit_feedback(&req.text, req.id) {
        Ok(entry) => Ok((StatusCode::CREATED, Json(entry))),
        Err(e @ FeedbackError::Empty) => Err(ApiError(StatusCode::BAD_REQUEST, e.to_string())),
        Err(e @ FeedbackError::Finished) => Err(ApiError(StatusCode::CONFLICT, e.to_string())),
        Err(e) => Err(internal(e)),
    }
}

pub fn router(runs_root: impl Into<PathBuf>) -> Router {
    let state = AppState {
        root: Arc::new(runs_root.into()),
        feedback_lock: Arc::new(Mutex::new(())),
    };
    Router::new()
        .route("/runs", get(list_runs))
        .route("/runs/{id}", get(get_run))
        .route("/runs/{id}/iterations/{k}", get(get_iteration))
        .route("/runs/{id}/plot/{k}", get(get_plot))
        .route("/runs/{id}/feedback", post(post_feedback))
        .with_state(state)
}

pub fn command(file: &FileConfig, a: &ServeArgs) -> anyhow::Result<()> {
    let root = a
        .runs_dir
        .clone()
        .or_else(|| file.paths.runs_dir.clone())
        .unwrap_or_else(|| DEFAULT_RUNS_DIR.into());
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(&a.addr)
            .await
            .with_context(|| format!("binding {}", a.addr))?;
        eprintln!("serving {} on http://{}", root.display(), listener.local_addr()?);
        axum::serve(listener, router(root))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        Ok(())
    })
}
