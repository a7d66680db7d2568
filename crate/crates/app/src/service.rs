//! HTTP adapter over [`ProjectStore`] and the propagation pipeline.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::json;
use tower_http::cors::{AllowOrigin, Any, CorsLayer};

use loopkit::dataset::{FrameLabels, LabelRecord};
use loopkit::propagation::PropagationError;

use crate::pipeline::{self, PipelineError, PropagateSettings};
use crate::store::{JobState, JobStatus, NewSequence, ProjectStore, StoreError};

pub struct AppState {
    store: ProjectStore,
    locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
}

impl AppState {
    pub fn new(store: ProjectStore) -> Self {
        Self {
            store,
            locks: Mutex::new(HashMap::new()),
        }
    }

    /// Lock serializing writes to one sequence.
    fn lock_for(&self, id: &str) -> Arc<Mutex<()>> {
        self.locks
            .lock()
            .expect("lock table poisoned")
            .entry(id.to_owned())
            .or_default()
            .clone()
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: serde_json::Value,
}

impl ApiError {
    fn bad_request(message: impl Into<String>) -> Self {
        Self {
            status: StatusCode::BAD_REQUEST,
            body: json!({ "error": message.into() }),
        }
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        let status = match &e {
            StoreError::NotFound(_) => StatusCode::NOT_FOUND,
            StoreError::Conflict(_) | StoreError::StaleVersion { .. } => StatusCode::CONFLICT,
            StoreError::Invalid(_) => StatusCode::BAD_REQUEST,
            StoreError::Io(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        let mut body = json!({ "error": e.to_string() });
        if let StoreError::StaleVersion { current, .. } = e {
            body["current_version"] = json!(current);
        }
        Self { status, body }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn parse<T: serde::de::DeserializeOwned>(body: &Bytes) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("malformed payload: {e}")))
}

pub fn router(store: ProjectStore, cors_origin: Option<HeaderValue>) -> Router {
    let origin = match cors_origin {
        Some(o) => AllowOrigin::list([o]),
        None => AllowOrigin::from(Any),
    };
    let cors = CorsLayer::new().allow_origin(origin).allow_methods(Any).allow_headers(Any);
    Router::new()
        .route("/sequences", get(list_sequences).post(create_sequence))
        .route("/sequences/{id}", get(get_sequence))
        .route("/sequences/{id}/frames/{frame}", get(get_frame))
        .route("/sequences/{id}/annotations/{frame}", get(get_annotation).post(post_annotation))
        .route("/sequences/{id}/propagate", post(post_propagate))
        .route("/sequences/{id}/status", get(get_status))
        .route("/sequences/{id}/labels.jsonl", get(get_labels))
        .layer(cors)
        .with_state(Arc::new(AppState::new(store)))
}

/// Runs the service until the process is stopped.
pub async fn serve(store: ProjectStore, addr: SocketAddr, cors_origin: Option<HeaderValue>) -> std::io::Result<()> {
    store.recover().map_err(std::io::Error::other)?;
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("serving {} on http://{}", store.root().display(), listener.local_addr()?);
    axum::serve(listener, router(store, cors_origin)).await
}

type Shared = State<Arc<AppState>>;

async fn list_sequences(State(state): Shared) -> ApiResult<Response> {
    Ok(Json(state.store.list()?).into_response())
}

async fn create_sequence(State(state): Shared, body: Bytes) -> ApiResult<Response> {
    let new: NewSequence = parse(&body)?;
    let info = state.store.create(new)?;
    Ok((StatusCode::CREATED, Json(info)).into_response())
}

async fn get_sequence(State(state): Shared, Path(id): Path<String>) -> ApiResult<Response> {
    Ok(Json(state.store.info(&id)?).into_response())
}

async fn get_frame(State(state): Shared, Path((id, frame)): Path<(String, usize)>) -> ApiResult<Response> {
    let path = state.store.frame_path(&id, frame)?;
    let bytes = tokio::task::spawn_blocking(move || -> Result<Vec<u8>, String> {
        let is_png = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png"));
        if is_png {
            return std::fs::read(&path).map_err(|e| e.to_string());
        }
        let img = image::open(&path).map_err(|e| e.to_string())?;
        let mut out = std::io::Cursor::new(Vec::new());
        img.write_to(&mut out, image::ImageFormat::Png).map_err(|e| e.to_string())?;
        Ok(out.into_inner())
    })
    .await
    .map_err(|e| ApiError {
        status: StatusCode::INTERNAL_SERVER_ERROR,
        body: json!({ "error": e.to_string() }),
    })?
    .map_err(|e| ApiError {
        status: StatusCode::INTERNAL_SERVER_ERROR,
        body: json!({ "error": e }),
    })?;
    Ok(([(header::CONTENT_TYPE, "image/png")], bytes).into_response())
}

async fn get_annotation(State(state): Shared, Path((id, frame)): Path<(String, usize)>) -> ApiResult<Response> {
    Ok(Json(state.store.annotation(&id, frame)?).into_response())
}

#[derive(Debug, Deserialize)]
struct AnnotationWrite {
    version: u64,
    labels: Vec<LabelRecord>,
}

async fn post_annotation(
    State(state): Shared,
    Path((id, frame)): Path<(String, usize)>,
    body: Bytes,
) -> ApiResult<Response> {
    let write: AnnotationWrite = parse(&body)?;
    pipeline::records_to_labels(&write.labels).map_err(|e| ApiError::bad_request(e.to_string()))?;
    let lock = state.lock_for(&id);
    let _guard = lock.lock().expect("sequence lock poisoned");
    let saved = state.store.write_annotation(&id, frame, write.version, write.labels)?;
    Ok(Json(saved).into_response())
}

#[derive(Debug, Default, Deserialize)]
#[serde(default)]
struct PropagateRequest {
    from_frame: usize,
    config: PropagateSettings,
}

async fn post_propagate(State(state): Shared, Path(id): Path<String>, body: Bytes) -> ApiResult<Response> {
    let request: PropagateRequest = if body.is_empty() { PropagateRequest::default() } else { parse(&body)? };
    let annotation = state.store.annotation(&id, request.from_frame)?;
    if annotation.labels.is_empty() {
        return Err(ApiError::bad_request(format!("frame {} has no annotation to propagate", request.from_frame)));
    }
    let seed = pipeline::records_to_labels(&annotation.labels).map_err(|e| ApiError::bad_request(e.to_string()))?;

    let queued = {
        let lock = state.lock_for(&id);
        let _guard = lock.lock().expect("sequence lock poisoned");
        let current = state.store.status(&id)?;
        if current.is_active() {
            return Err(StoreError::Conflict(format!("a propagation job is already pending for {id}")).into());
        }
        let status = JobStatus {
            state: JobState::Queued,
            job: current.job + 1,
            from_frame: Some(request.from_frame),
            ..JobStatus::idle()
        };
        state.store.write_status(&id, &status)?;
        status
    };

    let job_state = state.clone();
    let job_status = queued.clone();
    tokio::task::spawn_blocking(move || run_job(&job_state, &id, job_status, seed, request.config));
    Ok((StatusCode::ACCEPTED, Json(queued)).into_response())
}

fn run_job(
    state: &AppState,
    id: &str,
    mut status: JobStatus,
    seed: Vec<loopkit::OrientedLabel>,
    settings: PropagateSettings,
) {
    let from = status.from_frame.unwrap_or(0);
    status.state = JobState::Running;
    if let Err(e) = state.store.write_status(id, &status) {
        log::error!("{id}: cannot record job start: {e}");
    }
    let outcome = state.store.manifest(id).map_err(|e| e.to_string()).and_then(|manifest| {
        match pipeline::propagate_sequence(&manifest, state.store.root(), &seed, from, None, &settings) {
            Ok(labels) => Ok((pipeline::sequence_records(&labels), None)),
            Err(PipelineError::Propagation(e @ PropagationError::Broken { .. })) => {
                let partial = e.partial().map(pipeline::sequence_records).unwrap_or_default();
                let frame = match &e {
                    PropagationError::Broken { frame, .. } => *frame,
                    _ => unreachable!(),
                };
                Ok((partial, Some((frame, e.to_string()))))
            }
            Err(e) => Err(e.to_string()),
        }
    });

    let lock = state.lock_for(id);
    let _guard = lock.lock().expect("sequence lock poisoned");
    match outcome {
        Ok((records, broken)) => {
            let merged = state.store.labels(id).map(|old| merge_labels(old.unwrap_or_default(), from, records));
            match merged.and_then(|m| state.store.write_labels(id, &m).map(|_| m.len())) {
                Ok(count) => {
                    status.labeled_frames = Some(count);
                    match broken {
                        Some((frame, message)) => {
                            status.state = JobState::Failed;
                            status.broken_frame = Some(frame);
                            status.error = Some(message);
                        }
                        None => status.state = JobState::Done,
                    }
                }
                Err(e) => {
                    status.state = JobState::Failed;
                    status.error = Some(e.to_string());
                }
            }
        }
        Err(message) => {
            status.state = JobState::Failed;
            status.error = Some(message);
        }
    }
    if let Err(e) = state.store.write_status(id, &status) {
        log::error!("{id}: cannot record job result: {e}");
    }
}

/// Frames before `from` keep their previous labels; later frames are
/// replaced by the new run.
fn merge_labels(old: Vec<FrameLabels>, from: usize, new: Vec<FrameLabels>) -> Vec<FrameLabels> {
    old.into_iter().filter(|f| f.frame < from).chain(new).collect()
}

async fn get_status(State(state): Shared, Path(id): Path<String>) -> ApiResult<Response> {
    Ok(Json(state.store.status(&id)?).into_response())
}

async fn get_labels(State(state): Shared, Path(id): Path<String>) -> ApiResult<Response> {
    let path = state.store.labels_path(&id)?;
    match std::fs::read(&path) {
        Ok(bytes) => Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], bytes).into_response()),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            Err(StoreError::NotFound(format!("labels of {id} (not propagated yet)")).into())
        }
        Err(e) => Err(StoreError::Io(e).into()),
    }
}
