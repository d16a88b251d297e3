use std::collections::{BTreeMap, BTreeSet};
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tower_http::services::ServeDir;

use super::{AnnotationRecord, AnnotationStore, AnnotationTask, RelevanceScore, TaskBundle, UpsertOutcome, GUIDELINES};
use crate::pipeline::Clock;

/// Shared state behind the annotation API. `annotators = None` accepts any id.
#[derive(Clone)]
pub struct AppState {
    pub bundle: Arc<TaskBundle>,
    pub store: Arc<AnnotationStore>,
    pub annotators: Option<Arc<BTreeSet<String>>>,
    pub clock: Arc<dyn Clock>,
}

impl AppState {
    fn check_annotator(&self, id: &str) -> Result<(), ApiError> {
        if id.trim().is_empty() {
            return Err(ApiError(StatusCode::BAD_REQUEST, "annotator id is required".into()));
        }
        match &self.annotators {
            Some(set) if !set.contains(id) => {
                Err(ApiError(StatusCode::FORBIDDEN, format!("annotator `{id}` is not registered")))
            }
            _ => Ok(()),
        }
    }

    fn scored(&self, annotator: &str) -> BTreeMap<(String, String), RelevanceScore> {
        self.store
            .records_for(annotator)
            .into_iter()
            .map(|r| ((r.sample_id, r.slot), r.score))
            .collect()
    }
}

struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1 }))).into_response()
    }
}

#[derive(Deserialize)]
struct AnnotatorQuery {
    #[serde(default)]
    annotator: String,
    limit: Option<usize>,
}

#[derive(Serialize)]
struct Progress {
    annotator: String,
    done: usize,
    total: usize,
}

#[derive(Serialize)]
struct TaskView<'a> {
    #[serde(flatten)]
    task: &'a AnnotationTask,
    scores: BTreeMap<&'a str, RelevanceScore>,
}

fn progress(state: &AppState, annotator: &str) -> Progress {
    let scored = state.scored(annotator);
    let done = state
        .bundle
        .tasks
        .iter()
        .filter(|t| t.slots.iter().all(|s| scored.contains_key(&(t.sample_id.clone(), s.slot.clone()))))
        .count();
    Progress { annotator: annotator.to_string(), done, total: state.bundle.tasks.len() }
}

async fn tasks(State(state): State<AppState>, Query(q): Query<AnnotatorQuery>) -> Result<Response, ApiError> {
    state.check_annotator(&q.annotator)?;
    let scored = state.scored(&q.annotator);
    let limit = q.limit.unwrap_or(1).max(1);
    let pending: Vec<TaskView<'_>> = state
        .bundle
        .tasks
        .iter()
        .filter_map(|t| {
            let scores: BTreeMap<&str, RelevanceScore> = t
                .slots
                .iter()
                .filter_map(|s| scored.get(&(t.sample_id.clone(), s.slot.clone())).map(|v| (s.slot.as_str(), *v)))
                .collect();
            (scores.len() < t.slots.len()).then_some(TaskView { task: t, scores })
        })
        .take(limit)
        .collect();
    let progress = progress(&state, &q.annotator);
    let complete = pending.is_empty();
    Ok(Json(json!({ "progress": progress, "complete": complete, "tasks": pending })).into_response())
}

#[derive(Deserialize)]
struct Submission {
    sample_id: String,
    slot: String,
    annotator_id: String,
    score: f64,
}

async fn annotations(State(state): State<AppState>, Json(sub): Json<Submission>) -> Result<Response, ApiError> {
    state.check_annotator(&sub.annotator_id)?;
    let score = RelevanceScore::try_from(sub.score).map_err(|e| ApiError(StatusCode::BAD_REQUEST, e.to_string()))?;
    if !state.bundle.has_slot(&sub.sample_id, &sub.slot) {
        return Err(ApiError(
            StatusCode::BAD_REQUEST,
            format!("unknown task slot {}/{}", sub.sample_id, sub.slot),
        ));
    }
    let record = AnnotationRecord {
        sample_id: sub.sample_id,
        slot: sub.slot,
        annotator_id: sub.annotator_id,
        score,
        timestamp: state.clock.now(),
    };
    let outcome = state
        .store
        .upsert(record)
        .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    let status = match outcome {
        UpsertOutcome::Inserted => "inserted",
        UpsertOutcome::Updated => "updated",
        UpsertOutcome::Unchanged => "unchanged",
    };
    Ok(Json(json!({ "status": status })).into_response())
}

async fn progress_handler(
    State(state): State<AppState>,
    Query(q): Query<AnnotatorQuery>,
) -> Result<Json<Progress>, ApiError> {
    state.check_annotator(&q.annotator)?;
    Ok(Json(progress(&state, &q.annotator)))
}

async fn guidelines() -> impl IntoResponse {
    ([("content-type", "text/markdown; charset=utf-8")], GUIDELINES)
}

/// API routes, plus a static UI bundle at `/` when `static_dir` is given.
pub fn router(state: AppState, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/api/tasks", get(tasks))
        .route("/api/annotations", post(annotations))
        .route("/api/progress", get(progress_handler))
        .route("/api/guidelines", get(guidelines))
        .with_state(state);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

/// Serves until the process is stopped.
pub fn serve(addr: SocketAddr, state: AppState, static_dir: Option<PathBuf>) -> std::io::Result<()> {
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr).await?;
        log::info!("annotation server listening on {}", listener.local_addr()?);
        axum::serve(listener, router(state, static_dir)).await
    })
}
