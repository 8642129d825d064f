//! JSON over HTTP access to a trained model: explanations, class-pair
//! weights, versioned weight edits and evaluation reports.

mod error;
mod extract;
mod registry;

use std::net::SocketAddr;
use std::path::Path;
use std::sync::{Arc, RwLock};

use axum::extract::State;
use axum::routing::{get, post};
use axum::{Json, Router};
use dance_core::concepts::ConceptKind;
use dance_core::explain::{class_pair_weights, explain_deactivated, Explanation, SankeyData};
use dance_core::ingest::{load_manifest, DatasetManifest, PoseSequence};
use dance_core::intervene::{evaluate, intervention_report, DeactivationMode, InterventionReport, Metrics};
use dance_core::train::{DanceModel, EditRecord, ModelDims, TrainSummary};
use serde::{Deserialize, Serialize};
use tokio::net::TcpListener;

use crate::extract::{Body, Params};

pub use error::{ApiError, ErrorBody, ServerError};
pub use registry::{ModelRegistry, VersionInfo};

type ApiResult<T> = Result<Json<T>, ApiError>;

/// Shared state: a single-writer registry and the immutable manifest.
#[derive(Clone)]
pub struct AppState {
    registry: Arc<RwLock<ModelRegistry>>,
    manifest: Arc<DatasetManifest>,
}

impl AppState {
    pub fn new(model: DanceModel, manifest: DatasetManifest) -> Result<Self, ServerError> {
        if model.class_names() != manifest.class_names() {
            return Err(dance_core::Error::Validation("model classes differ from the manifest's".into()).into());
        }
        if model.dims().feature_dim != manifest.feature_dim() {
            return Err(dance_core::Error::Validation(format!(
                "model expects {}-dim features, manifest has {}",
                model.dims().feature_dim,
                manifest.feature_dim()
            ))
            .into());
        }
        Ok(AppState {
            registry: Arc::new(RwLock::new(ModelRegistry::new(model))),
            manifest: Arc::new(manifest),
        })
    }

    pub fn load(model_dir: &Path, manifest: &Path) -> Result<Self, ServerError> {
        AppState::new(DanceModel::load(model_dir)?, load_manifest(manifest)?)
    }

    fn model(&self, version: Option<&str>) -> Result<(String, Arc<DanceModel>), ApiError> {
        self.registry.read().expect("registry lock").get(version)
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/model", get(get_model))
        .route("/concepts", get(get_concepts))
        .route("/videos", get(get_videos))
        .route("/versions", get(get_versions))
        .route("/versions/activate", post(activate_version))
        .route("/sankey", get(get_sankey))
        .route("/explain", post(post_explain))
        .route("/intervene/class", post(post_intervene_class))
        .route("/evaluate", post(post_evaluate))
        .route("/report", post(post_report))
        .fallback(|| async { ApiError::not_found("no such endpoint") })
        .with_state(state)
}

/// Binds `addr`; a busy port is reported here rather than at first request.
pub async fn bind(addr: SocketAddr) -> Result<TcpListener, ServerError> {
    TcpListener::bind(addr).await.map_err(|source| ServerError::Bind { addr, source })
}

pub async fn serve_on(listener: TcpListener, state: AppState) -> Result<(), ServerError> {
    if let Ok(addr) = listener.local_addr() {
        log::info!("listening on http://{addr}");
    }
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(ServerError::Serve)
}

/// Loads the model and manifest, binds and serves until interrupted.
pub async fn serve(model_dir: &Path, manifest: &Path, addr: SocketAddr) -> Result<(), ServerError> {
    let state = AppState::load(model_dir, manifest)?;
    let listener = bind(addr).await?;
    serve_on(listener, state).await
}

#[derive(Debug, Default, Deserialize)]
struct VersionQuery {
    version: Option<String>,
}

#[derive(Debug, Serialize)]
struct ModelResponse {
    version: String,
    parent: Option<String>,
    dims: ModelDims,
    class_names: Vec<String>,
    lambda: f64,
    alpha: f64,
    summary: TrainSummary,
    edit_log: Vec<EditRecord>,
}

async fn get_model(State(s): State<AppState>, Params(q): Params<VersionQuery>) -> ApiResult<ModelResponse> {
    let (version, model) = s.model(q.version.as_deref())?;
    let parent = s.registry.read().expect("registry lock").parent_of(&version)?;
    Ok(Json(ModelResponse {
        parent,
        dims: model.dims(),
        class_names: model.class_names().to_vec(),
        lambda: model.config().lambda,
        alpha: model.config().alpha,
        summary: model.summary().clone(),
        edit_log: model.edit_log().to_vec(),
        version,
    }))
}

#[derive(Debug, Serialize)]
struct ConceptEntry {
    index: usize,
    kind: ConceptKind,
    name: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    medoid: Option<PoseSequence>,
}

#[derive(Debug, Serialize)]
struct ConceptsResponse {
    version: String,
    concepts: Vec<ConceptEntry>,
}

async fn get_concepts(State(s): State<AppState>, Params(q): Params<VersionQuery>) -> ApiResult<ConceptsResponse> {
    let (version, model) = s.model(q.version.as_deref())?;
    let space = model.concepts();
    let concepts = (0..space.len())
        .map(|i| ConceptEntry {
            index: i,
            kind: space.kind_of(i).expect("index in range"),
            name: space.name(i).expect("index in range").to_string(),
            medoid: space.medoid(i).cloned(),
        })
        .collect();
    Ok(Json(ConceptsResponse { version, concepts }))
}

#[derive(Debug, Deserialize)]
struct VideosQuery {
    split: Option<String>,
    version: Option<String>,
}

#[derive(Debug, Serialize)]
struct VideoEntry {
    id: String,
    label: usize,
    class_name: String,
}

#[derive(Debug, Serialize)]
struct VideosResponse {
    version: String,
    split: Option<String>,
    videos: Vec<VideoEntry>,
}

async fn get_videos(State(s): State<AppState>, Params(q): Params<VideosQuery>) -> ApiResult<VideosResponse> {
    let (version, _) = s.model(q.version.as_deref())?;
    let m = &s.manifest;
    let rows = match &q.split {
        Some(split) => m
            .split_indices(split)
            .map_err(|_| ApiError::not_found(format!("unknown split {split:?}")))?,
        None => m.all_rows(),
    };
    let videos = rows
        .into_iter()
        .map(|r| {
            let v = &m.videos()[r];
            VideoEntry {
                id: v.id.clone(),
                label: v.label,
                class_name: m.class_names()[v.label].clone(),
            }
        })
        .collect();
    Ok(Json(VideosResponse {
        version,
        split: q.split,
        videos,
    }))
}

#[derive(Debug, Serialize)]
struct VersionsResponse {
    version: String,
    versions: Vec<VersionInfo>,
}

async fn get_versions(State(s): State<AppState>) -> ApiResult<VersionsResponse> {
    let reg = s.registry.read().expect("registry lock");
    Ok(Json(VersionsResponse {
        version: reg.active_id().to_string(),
        versions: reg.list(),
    }))
}

#[derive(Debug, Deserialize)]
struct ActivateRequest {
    version: String,
}

async fn activate_version(State(s): State<AppState>, Body(req): Body<ActivateRequest>) -> ApiResult<VersionsResponse> {
    let mut reg = s.registry.write().expect("registry lock");
    reg.activate(&req.version)?;
    Ok(Json(VersionsResponse {
        version: reg.active_id().to_string(),
        versions: reg.list(),
    }))
}

#[derive(Debug, Deserialize)]
struct SankeyQuery {
    class_a: usize,
    class_b: usize,
    #[serde(default = "default_top_n")]
    top_n: usize,
    version: Option<String>,
}

fn default_top_n() -> usize {
    5
}

#[derive(Debug, Serialize)]
struct SankeyResponse {
    version: String,
    #[serde(flatten)]
    sankey: SankeyData,
}

fn check_class(model: &DanceModel, class: usize) -> Result<(), ApiError> {
    let k = model.dims().classes;
    if class >= k {
        return Err(ApiError::not_found(format!("unknown class {class} (model has {k})")));
    }
    Ok(())
}

fn check_concept(model: &DanceModel, concept: usize) -> Result<(), ApiError> {
    let m = model.dims().concepts();
    if concept >= m {
        return Err(ApiError::not_found(format!("unknown concept {concept} (model has {m})")));
    }
    Ok(())
}

async fn get_sankey(State(s): State<AppState>, Params(q): Params<SankeyQuery>) -> ApiResult<SankeyResponse> {
    let (version, model) = s.model(q.version.as_deref())?;
    check_class(&model, q.class_a)?;
    check_class(&model, q.class_b)?;
    let sankey = class_pair_weights(&model, q.class_a, q.class_b, q.top_n)?;
    Ok(Json(SankeyResponse { version, sankey }))
}

#[derive(Debug, Deserialize)]
struct ExplainRequest {
    #[serde(alias = "video")]
    video_id: String,
    #[serde(default = "default_k")]
    k: usize,
    #[serde(default)]
    deactivated: Vec<usize>,
    #[serde(default)]
    mode: DeactivationMode,
    version: Option<String>,
}

fn default_k() -> usize {
    5
}

#[derive(Debug, Serialize)]
struct ExplainResponse {
    version: String,
    #[serde(flatten)]
    explanation: Explanation,
}

async fn post_explain(State(s): State<AppState>, Body(req): Body<ExplainRequest>) -> ApiResult<ExplainResponse> {
    let (version, model) = s.model(req.version.as_deref())?;
    let row = s
        .manifest
        .index_of(&req.video_id)
        .ok_or_else(|| ApiError::not_found(format!("unknown video {:?}", req.video_id)))?;
    for &c in &req.deactivated {
        check_concept(&model, c)?;
    }
    let x = s.manifest.load_features(&[row])?;
    let mut explanation = explain_deactivated(x.row(0), &model, req.k, &req.deactivated, req.mode)?;
    explanation.video_id = Some(req.video_id);
    Ok(Json(ExplainResponse { version, explanation }))
}

#[derive(Debug, Deserialize)]
struct InterveneRequest {
    class: usize,
    concept: usize,
    value: f64,
    /// Version to edit; defaults to the active one.
    version: Option<String>,
}

#[derive(Debug, Serialize)]
struct InterveneResponse {
    version: String,
    parent: Option<String>,
    edit: Option<EditRecord>,
}

async fn post_intervene_class(State(s): State<AppState>, Body(req): Body<InterveneRequest>) -> ApiResult<InterveneResponse> {
    let mut reg = s.registry.write().expect("registry lock");
    let (_, model) = reg.get(req.version.as_deref())?;
    check_class(&model, req.class)?;
    check_concept(&model, req.concept)?;
    let info = reg.edit(req.version.as_deref(), req.class, req.concept, req.value)?;
    log::info!("created {} from {:?}", info.id, info.parent);
    Ok(Json(InterveneResponse {
        version: info.id,
        parent: info.parent,
        edit: info.edit,
    }))
}

#[derive(Debug, Deserialize)]
struct EvaluateRequest {
    version: Option<String>,
    #[serde(default = "default_split")]
    split: String,
}

fn default_split() -> String {
    "test".into()
}

#[derive(Debug, Serialize)]
struct EvaluateResponse {
    version: String,
    split: String,
    #[serde(flatten)]
    metrics: Metrics,
}

fn check_split(m: &DatasetManifest, split: &str) -> Result<(), ApiError> {
    m.split_ids(split)
        .map(|_| ())
        .map_err(|_| ApiError::not_found(format!("unknown split {split:?}")))
}

async fn post_evaluate(State(s): State<AppState>, Body(req): Body<EvaluateRequest>) -> ApiResult<EvaluateResponse> {
    let (version, model) = s.model(req.version.as_deref())?;
    check_split(&s.manifest, &req.split)?;
    let metrics = evaluate(&model, &s.manifest, &req.split)?;
    Ok(Json(EvaluateResponse {
        version,
        split: req.split,
        metrics,
    }))
}

#[derive(Debug, Deserialize)]
struct ReportRequest {
    /// Defaults to the parent of `after`.
    before: Option<String>,
    /// Defaults to the active version.
    after: Option<String>,
    #[serde(default = "default_split")]
    split: String,
}

#[derive(Debug, Serialize)]
struct ReportResponse {
    version: String,
    before: String,
    after: String,
    split: String,
    #[serde(flatten)]
    report: InterventionReport,
}

async fn post_report(State(s): State<AppState>, Body(req): Body<ReportRequest>) -> ApiResult<ReportResponse> {
    let (after_id, after, before_id, before) = {
        let reg = s.registry.read().expect("registry lock");
        let (after_id, after) = reg.get(req.after.as_deref())?;
        let before_id = match req.before {
            Some(b) => b,
            None => reg
                .parent_of(&after_id)?
                .ok_or_else(|| ApiError::bad_request(format!("version {after_id} has no parent; give \"before\"")))?,
        };
        let (before_id, before) = reg.get(Some(&before_id))?;
        (after_id, after, before_id, before)
    };
    check_split(&s.manifest, &req.split)?;
    let report = intervention_report(&before, &after, &s.manifest, &req.split)?;
    Ok(Json(ReportResponse {
        version: after_id.clone(),
        before: before_id,
        after: after_id,
        split: req.split,
        report,
    }))
}
