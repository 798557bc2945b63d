//! HTTP steering API over a single model session.

use std::path::PathBuf;
use std::sync::{Arc, RwLock};

use axum::body::Bytes;
use axum::extract::{FromRequest, Path, Query, Request, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, patch, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;

use protots::checkpoint::ModelCheckpoint;
use protots::data::{make_windows, DatasetBundle, Split, VariableSchema, WindowInstance};
use protots::evaluation::{activation_report, evaluate_with, explain};
use protots::model::ProtoTsModel;
use protots::prototypes::NodeId;
use protots::trainer::{staged_train_with_progress, Progress, TrainConfig, TrainData, TrainReport};
use protots::Error;

/// Windows the service evaluates and trains on, normalized with the
/// checkpoint's statistics.
#[derive(Debug, Clone)]
pub struct ServeData {
    pub splits: TrainData,
    /// Every window of the bundle, keyed by its start row.
    pub all: Vec<WindowInstance>,
}

impl ServeData {
    pub fn new(raw: &DatasetBundle, schema: &VariableSchema, model: &ProtoTsModel) -> Self {
        let bundle = model.normalizer.apply(raw);
        Self {
            splits: TrainData::from_bundle(&bundle, schema, 1),
            all: make_windows(&bundle, schema, 1),
        }
    }

    pub fn split(&self, split: Split) -> &[WindowInstance] {
        match split {
            Split::Train => &self.splits.train,
            Split::Val => &self.splits.val,
            Split::Test => &self.splits.test,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum JobStatus {
    Idle,
    Running {
        job_id: u64,
        completed_epochs: usize,
        planned_epochs: usize,
        progress: f64,
    },
    Failed {
        job_id: u64,
        message: String,
    },
}

#[derive(Debug)]
pub struct Session {
    pub checkpoint: ModelCheckpoint,
    pub revision: u64,
    pub job: JobStatus,
    pub last_report: Option<TrainReport>,
    next_job: u64,
}

impl Session {
    pub fn new(checkpoint: ModelCheckpoint) -> Self {
        Self {
            checkpoint,
            revision: 0,
            job: JobStatus::Idle,
            last_report: None,
            next_job: 1,
        }
    }

    fn ensure_idle(&self) -> Result<(), ApiError> {
        match self.job {
            JobStatus::Running { job_id, .. } => Err(ApiError::conflict(format!(
                "training job {job_id} is running; mutations are rejected until it finishes"
            ))),
            _ => Ok(()),
        }
    }
}

#[derive(Clone)]
pub struct AppState {
    pub session: Arc<RwLock<Session>>,
    pub data: Arc<ServeData>,
}

impl AppState {
    pub fn new(checkpoint: ModelCheckpoint, data: ServeData) -> Self {
        Self {
            session: Arc::new(RwLock::new(Session::new(checkpoint))),
            data: Arc::new(data),
        }
    }

    /// Model and revision as of one consistent read.
    fn snapshot(&self) -> (ProtoTsModel, u64) {
        let s = self.session.read().expect("session lock");
        (s.checkpoint.model.clone(), s.revision)
    }
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub message: String,
    pub field: Option<String>,
}

impl ApiError {
    pub fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
            field: None,
        }
    }

    pub fn conflict(message: impl Into<String>) -> Self {
        Self::new(StatusCode::CONFLICT, message)
    }

    pub fn invalid(message: impl Into<String>, field: &str) -> Self {
        Self {
            status: StatusCode::BAD_REQUEST,
            message: message.into(),
            field: Some(field.to_string()),
        }
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Contract(_) => StatusCode::CONFLICT,
            Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => StatusCode::NOT_FOUND,
            Error::Io { .. } | Error::NonFinite(_) => StatusCode::INTERNAL_SERVER_ERROR,
            _ => StatusCode::BAD_REQUEST,
        };
        Self::new(status, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message, "field": self.field }))).into_response()
    }
}

/// JSON body whose decoding errors report the offending field path.
pub struct JsonBody<T>(pub T);

impl<S: Send + Sync, T: DeserializeOwned> FromRequest<S> for JsonBody<T> {
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, Self::Rejection> {
        let bytes = Bytes::from_request(req, state)
            .await
            .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, e.to_string()))?;
        let de = &mut serde_json::Deserializer::from_slice(&bytes);
        serde_path_to_error::deserialize(de).map(JsonBody).map_err(|e| {
            let path = e.path().to_string();
            ApiError::invalid(e.inner().to_string(), &path)
        })
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

#[derive(Debug, Deserialize)]
pub struct SplitQuery {
    pub split: Option<Split>,
    pub k: Option<usize>,
    #[serde(default)]
    pub denormalize: bool,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitBody {
    #[serde(rename = "M", alias = "m")]
    pub m: usize,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatternBody {
    pub pattern: Vec<f64>,
    #[serde(default)]
    pub lock: bool,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathBody {
    pub path: PathBuf,
}

async fn get_tree(State(app): State<AppState>) -> ApiResult<serde_json::Value> {
    let (model, revision) = app.snapshot();
    let leaves = model.tree.leaves();
    Ok(Json(json!({
        "revision": revision,
        "d": model.tree.d,
        "period": model.tree.period,
        "roots": model.tree.roots,
        "leaves": leaves,
        "nodes": model.tree.nodes,
    })))
}

async fn get_activations(State(app): State<AppState>, Query(q): Query<SplitQuery>) -> ApiResult<serde_json::Value> {
    let (model, revision) = app.snapshot();
    let windows = app.data.split(q.split.unwrap_or(Split::Test));
    let timeline = activation_report(&model, windows, q.k.unwrap_or(3))?;
    Ok(Json(json!({ "revision": revision, "k": timeline.k, "entries": timeline.entries })))
}

async fn get_explain(State(app): State<AppState>, Path(instance): Path<usize>) -> ApiResult<serde_json::Value> {
    let (model, revision) = app.snapshot();
    let window = app
        .data
        .all
        .iter()
        .find(|w| w.start == instance)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("no window starts at row {instance}")))?;
    let e = explain(&model, window)?;
    Ok(Json(json!({ "revision": revision, "explanation": e })))
}

async fn get_metrics(State(app): State<AppState>, Query(q): Query<SplitQuery>) -> ApiResult<serde_json::Value> {
    let (model, revision) = app.snapshot();
    let windows = app.data.split(q.split.unwrap_or(Split::Test));
    let report = evaluate_with(&model, windows, q.denormalize)?;
    Ok(Json(json!({ "revision": revision, "metrics": report })))
}

async fn post_split(
    State(app): State<AppState>,
    Path(id): Path<usize>,
    JsonBody(body): JsonBody<SplitBody>,
) -> ApiResult<serde_json::Value> {
    let mut s = app.session.write().expect("session lock");
    s.ensure_idle()?;
    let model = &mut s.checkpoint.model;
    if id >= model.tree.nodes.len() {
        return Err(ApiError::new(StatusCode::NOT_FOUND, format!("no prototype with id {id}")));
    }
    if body.m < 2 {
        return Err(ApiError::invalid("a split needs at least 2 children", "M"));
    }
    let children = model.split(NodeId(id), body.m, body.seed)?;
    s.revision += 1;
    Ok(Json(json!({ "revision": s.revision, "children": children })))
}

async fn patch_pattern(
    State(app): State<AppState>,
    Path(id): Path<usize>,
    JsonBody(body): JsonBody<PatternBody>,
) -> ApiResult<serde_json::Value> {
    let mut s = app.session.write().expect("session lock");
    s.ensure_idle()?;
    let tree = &mut s.checkpoint.model.tree;
    if id >= tree.nodes.len() {
        return Err(ApiError::new(StatusCode::NOT_FOUND, format!("no prototype with id {id}")));
    }
    if body.pattern.len() != tree.period {
        return Err(ApiError::invalid(
            format!("pattern needs {} points, got {}", tree.period, body.pattern.len()),
            "pattern",
        ));
    }
    tree.edit_pattern(NodeId(id), body.pattern, body.lock)?;
    s.revision += 1;
    Ok(Json(json!({ "revision": s.revision })))
}

async fn post_train(
    State(app): State<AppState>,
    JsonBody(cfg): JsonBody<TrainConfig>,
) -> Result<(StatusCode, Json<serde_json::Value>), ApiError> {
    cfg.validate().map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, e.to_string()))?;
    let (job_id, mut model) = {
        let mut s = app.session.write().expect("session lock");
        s.ensure_idle()?;
        let job_id = s.next_job;
        s.next_job += 1;
        s.job = JobStatus::Running {
            job_id,
            completed_epochs: 0,
            planned_epochs: cfg.max_epochs * (cfg.stages.len() + 1),
            progress: 0.0,
        };
        (job_id, s.checkpoint.model.clone())
    };
    let session = app.session.clone();
    let data = app.data.clone();
    tokio::task::spawn_blocking(move || {
        let progress_session = session.clone();
        let mut on_progress = move |p: Progress| {
            let mut s = progress_session.write().expect("session lock");
            s.job = JobStatus::Running {
                job_id,
                completed_epochs: p.completed_epochs,
                planned_epochs: p.planned_epochs,
                progress: p.completed_epochs as f64 / p.planned_epochs.max(1) as f64,
            };
        };
        let result = staged_train_with_progress(&mut model, &data.splits, &cfg, &mut on_progress);
        let mut s = session.write().expect("session lock");
        match result {
            Ok(report) => {
                s.checkpoint.model = model;
                s.checkpoint.train_config = Some(cfg);
                s.last_report = Some(report);
                s.revision += 1;
                s.job = JobStatus::Idle;
                log::info!("training job {job_id} committed as revision {}", s.revision);
            }
            Err(e) => {
                log::warn!("training job {job_id} failed: {e}");
                s.job = JobStatus::Failed {
                    job_id,
                    message: e.to_string(),
                };
            }
        }
    });
    Ok((StatusCode::ACCEPTED, Json(json!({ "job_id": job_id }))))
}

async fn get_train_status(State(app): State<AppState>) -> ApiResult<serde_json::Value> {
    let s = app.session.read().expect("session lock");
    Ok(Json(json!({
        "revision": s.revision,
        "job": s.job,
        "n_nodes": s.checkpoint.model.tree.nodes.len(),
        "n_leaves": s.checkpoint.model.tree.leaves().len(),
        "last_report": s.last_report,
    })))
}

async fn post_save(State(app): State<AppState>, JsonBody(body): JsonBody<PathBody>) -> ApiResult<serde_json::Value> {
    let (checkpoint, revision) = {
        let s = app.session.read().expect("session lock");
        (s.checkpoint.clone(), s.revision)
    };
    checkpoint.save(&body.path)?;
    Ok(Json(json!({ "revision": revision, "path": body.path })))
}

async fn post_load(State(app): State<AppState>, JsonBody(body): JsonBody<PathBody>) -> ApiResult<serde_json::Value> {
    let loaded = ModelCheckpoint::load(&body.path)?;
    let mut s = app.session.write().expect("session lock");
    s.ensure_idle()?;
    if loaded.model.schema != s.checkpoint.model.schema {
        return Err(ApiError::conflict("checkpoint schema differs from the served dataset"));
    }
    s.checkpoint = loaded;
    s.revision += 1;
    Ok(Json(json!({ "revision": s.revision })))
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/model/tree", get(get_tree))
        .route("/model/activations", get(get_activations))
        .route("/model/explain/{instance}", get(get_explain))
        .route("/model/metrics", get(get_metrics))
        .route("/prototypes/{id}/split", post(post_split))
        .route("/prototypes/{id}/pattern", patch(patch_pattern))
        .route("/train", post(post_train))
        .route("/train/status", get(get_train_status))
        .route("/checkpoint/save", post(post_save))
        .route("/checkpoint/load", post(post_load))
        .with_state(state)
}

/// Serves until ctrl-c.
pub async fn serve(state: AppState, bind: &str) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(bind).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
