//! HTTP JSON API over a file-backed knowledge base.
//!
//! Reads run against immutable snapshots; writes go through the store's
//! single writer on the blocking pool.

mod config;
mod error;

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{FromRequest, Path, Query, Request, State};
use axum::http::header::CONTENT_TYPE;
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use vlqual_core::fusion::{PopulationStats, ScoreTable};
use vlqual_core::kb::{InterchangeRecord, IngestReport, KnowledgeBase, ModelConfig, Store};
use vlqual_core::model::{AssessmentCriterion, FusionConfig, HybridScore, PromptVariant};
use vlqual_core::retrieval::{retrieve, QueryDescriptor, RankMode, RetrievalResult};
use vlqual_core::scoring::{baseline_from_table, nearest_references, score_batch, score_sample};
use vlqual_core::tree::{evaluate_tree, QualificationTrace, TreeConfig};

pub use config::{ConfigError, ServiceConfig, ENV_ADAPTER_URL, ENV_DATA_DIR, ENV_LISTEN, ENV_THRESHOLD};
pub use error::{ApiError, ErrorCode};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub struct AppState {
    pub store: Store,
    pub config: ServiceConfig,
    http: reqwest::Client,
}

impl AppState {
    pub fn new(store: Store, config: ServiceConfig) -> Self {
        AppState { store, config, http: reqwest::Client::new() }
    }

    /// Opens the configured data directory, or an empty in-memory store.
    pub fn from_config(config: ServiceConfig) -> Result<Self, vlqual_core::Error> {
        let store = match &config.data_dir {
            Some(dir) => {
                std::fs::create_dir_all(dir)?;
                Store::open(dir)?
            }
            None => Store::in_memory(KnowledgeBase::new()),
        };
        Ok(Self::new(store, config))
    }
}

type Shared = Arc<AppState>;
type ApiResult<T> = Result<Json<T>, ApiError>;

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/embeddings", post(post_embeddings))
        .route("/embeddings/{id}", get(get_embedding))
        .route("/labels", post(post_labels))
        .route("/criteria", get(list_criteria))
        .route("/criteria/{id}", get(get_criterion).put(put_criterion))
        .route("/score", post(post_score))
        .route("/qualify", post(post_qualify))
        .route("/qualify/tree", post(post_qualify_tree))
        .route("/retrieve", post(post_retrieve))
        .route("/extract", post(post_extract))
        .with_state(Arc::new(state))
}

pub async fn serve(config: ServiceConfig) -> Result<(), Box<dyn std::error::Error + Send + Sync>> {
    let listen = config.listen;
    let app = router(AppState::from_config(config)?);
    let listener = tokio::net::TcpListener::bind(listen).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}

/// JSON body extractor that insists on a JSON content type and reports
/// malformed bodies as [`ApiError`]s.
pub struct ApiJson<T>(pub T);

impl<S: Send + Sync, T: DeserializeOwned> FromRequest<S> for ApiJson<T> {
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, ApiError> {
        let is_json = req
            .headers()
            .get(CONTENT_TYPE)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.split(';').next())
            .is_some_and(|v| v.trim().eq_ignore_ascii_case("application/json"));
        if !is_json {
            return Err(ApiError::bad_request("content-type must be application/json"));
        }
        let bytes = Bytes::from_request(req, state)
            .await
            .map_err(|e| ApiError::bad_request(e.to_string()))?;
        serde_json::from_slice(&bytes)
            .map(ApiJson)
            .map_err(|e| ApiError::bad_request(format!("invalid request body: {e}")))
    }
}

/// Applies a partial JSON object on top of `base`.
fn merge<T: Serialize + DeserializeOwned>(base: &T, patch: Option<&Value>) -> Result<T, ApiError> {
    let mut doc = serde_json::to_value(base).map_err(|e| ApiError::new(ErrorCode::Internal, e.to_string()))?;
    if let Some(patch) = patch {
        let Value::Object(fields) = patch else {
            return Err(ApiError::bad_request("overrides must be a JSON object"));
        };
        let Value::Object(target) = &mut doc else {
            return Err(ApiError::new(ErrorCode::Internal, "config is not an object"));
        };
        for (k, v) in fields {
            if !target.contains_key(k) {
                return Err(ApiError::bad_request(format!("unknown override '{k}'")));
            }
            target.insert(k.clone(), v.clone());
        }
    }
    serde_json::from_value(doc).map_err(|e| ApiError::bad_request(format!("invalid overrides: {e}")))
}

/// Runs a store write on the blocking pool.
async fn write<T: Send + 'static>(
    state: &Shared,
    f: impl FnOnce(&mut KnowledgeBase) -> vlqual_core::Result<T> + Send + 'static,
) -> Result<T, ApiError> {
    let state = Arc::clone(state);
    tokio::task::spawn_blocking(move || state.store.write(f))
        .await
        .map_err(|e| ApiError::new(ErrorCode::Internal, e.to_string()))?
        .map_err(ApiError::from)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub version: String,
    pub kb_snapshot_id: String,
}

async fn health(State(state): State<Shared>) -> Json<Health> {
    Json(Health {
        status: "ok".into(),
        version: VERSION.into(),
        kb_snapshot_id: state.store.snapshot().id(),
    })
}

fn records_to_lines(records: &[InterchangeRecord]) -> Result<String, ApiError> {
    let mut text = String::new();
    for r in records {
        text.push_str(&serde_json::to_string(r).map_err(|e| ApiError::bad_request(e.to_string()))?);
        text.push('\n');
    }
    Ok(text)
}

async fn post_embeddings(
    State(state): State<Shared>,
    ApiJson(records): ApiJson<Vec<InterchangeRecord>>,
) -> ApiResult<IngestReport> {
    let text = records_to_lines(&records)?;
    Ok(Json(write(&state, move |kb| kb.ingest_embeddings_str(&text)).await?))
}

#[derive(Debug, Deserialize)]
struct ModelQuery {
    model: Option<String>,
}

async fn get_embedding(
    State(state): State<Shared>,
    Path(id): Path<String>,
    Query(q): Query<ModelQuery>,
) -> ApiResult<InterchangeRecord> {
    let snap = state.store.snapshot();
    let matches: Vec<_> = snap
        .embeddings_with_id(&id)
        .filter(|e| q.model.as_deref().is_none_or(|m| e.embedding.model_id == m))
        .collect();
    match matches.as_slice() {
        [] => Err(ApiError::not_found(format!("embedding '{id}'"))),
        [one] => Ok(Json(one.to_record())),
        many => Err(ApiError::bad_request(format!("embedding id '{id}' exists for several models; pass ?model="))
            .with_detail(Value::from(many.iter().map(|e| e.embedding.model_id.clone()).collect::<Vec<_>>()))),
    }
}

#[derive(Debug, Deserialize)]
struct LabelsRequest {
    csv: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CountResponse {
    pub count: usize,
}

async fn post_labels(
    State(state): State<Shared>,
    ApiJson(req): ApiJson<LabelsRequest>,
) -> ApiResult<CountResponse> {
    let count = write(&state, move |kb| kb.load_labels_str(&req.csv)).await?;
    Ok(Json(CountResponse { count }))
}

async fn list_criteria(State(state): State<Shared>) -> Json<Vec<AssessmentCriterion>> {
    Json(state.store.snapshot().criteria().cloned().collect())
}

async fn get_criterion(State(state): State<Shared>, Path(id): Path<String>) -> ApiResult<AssessmentCriterion> {
    state
        .store
        .snapshot()
        .criterion(&id)
        .cloned()
        .map(Json)
        .ok_or_else(|| ApiError::not_found(format!("criterion '{id}'")))
}

async fn put_criterion(
    State(state): State<Shared>,
    Path(id): Path<String>,
    ApiJson(mut body): ApiJson<Value>,
) -> ApiResult<AssessmentCriterion> {
    let Value::Object(fields) = &mut body else {
        return Err(ApiError::bad_request("criterion must be a JSON object"));
    };
    match fields.get("criterion_id") {
        None => {
            fields.insert("criterion_id".into(), Value::String(id.clone()));
        }
        Some(Value::String(given)) if *given == id => {}
        Some(other) => {
            return Err(ApiError::bad_request(format!(
                "criterion_id {other} does not match path '{id}'"
            )))
        }
    }
    let criterion: AssessmentCriterion =
        serde_json::from_value(body).map_err(|e| ApiError::bad_request(format!("invalid criterion: {e}")))?;
    let stored = write(&state, move |kb| kb.upsert_criterion(criterion).cloned()).await?;
    Ok(Json(stored))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScoreRequest {
    criterion_id: String,
    #[serde(default)]
    sample_ids: Option<Vec<String>>,
    #[serde(default)]
    models: Option<Value>,
    #[serde(default)]
    overrides: Option<Value>,
    /// Also store the batch statistics as the criterion's baseline.
    #[serde(default)]
    save_baseline: bool,
}

async fn post_score(State(state): State<Shared>, ApiJson(req): ApiJson<ScoreRequest>) -> ApiResult<ScoreTable> {
    let models: ModelConfig = merge(&state.config.models, req.models.as_ref())?;
    let fusion: FusionConfig = merge(&state.config.fusion, req.overrides.as_ref())?;
    let table = write(&state, move |kb| {
        let table = score_batch(kb, req.sample_ids.as_deref(), &req.criterion_id, &models, &fusion)?;
        if req.save_baseline {
            kb.set_baseline(baseline_from_table(&table)?);
        }
        kb.append_score_table(table.clone());
        Ok(table)
    })
    .await?;
    Ok(Json(table))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct QualifyRequest {
    sample_id: String,
    criterion_id: String,
    #[serde(default)]
    models: Option<Value>,
    #[serde(default)]
    overrides: Option<Value>,
    /// Score against this stored batch instead of the criterion baseline.
    #[serde(default)]
    batch_id: Option<String>,
    /// Pre-computed embeddings of an uploaded image. They are used for this
    /// request only and never stored.
    #[serde(default)]
    embeddings: Vec<InterchangeRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Reference {
    pub sample_id: String,
    pub cosine: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QualifyResponse {
    pub score: HybridScore,
    pub config: FusionConfig,
    pub models: ModelConfig,
    pub population_id: String,
    pub population_stats: Option<PopulationStats>,
    pub positive_text: String,
    pub negative_text: String,
    pub nearest_positive: Option<Reference>,
    pub nearest_negative: Option<Reference>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
    pub kb_snapshot_id: String,
}

fn qualify(
    kb: &KnowledgeBase,
    req: &QualifyRequest,
    models: &ModelConfig,
    fusion: &FusionConfig,
) -> Result<QualifyResponse, ApiError> {
    let criterion = kb
        .criterion(&req.criterion_id)
        .ok_or_else(|| ApiError::not_found(format!("criterion '{}'", req.criterion_id)))?;
    if kb.sample(&req.sample_id).is_none() {
        return Err(ApiError::not_found(format!("sample '{}'", req.sample_id)));
    }
    let (score, refs) = score_sample(kb, &req.sample_id, &req.criterion_id, models, fusion, req.batch_id.as_deref())?;
    let (pos, neg) = nearest_references(kb, &req.sample_id, &refs)?;
    let (positive_text, negative_text, _) = criterion.prompts(models.variant);
    let population_stats = match &req.batch_id {
        Some(id) => kb.score_table(id).map(|t| t.population_stats),
        None => kb
            .baseline(&vlqual_core::kb::BaselineKey::new(&req.criterion_id, models))
            .map(|b| b.stats),
    };
    let to_ref = |r: Option<(String, f64)>| r.map(|(sample_id, cosine)| Reference { sample_id, cosine });
    Ok(QualifyResponse {
        population_id: score.batch_id.clone(),
        score,
        config: *fusion,
        models: models.clone(),
        population_stats,
        positive_text: positive_text.to_string(),
        negative_text: negative_text.to_string(),
        nearest_positive: to_ref(pos),
        nearest_negative: to_ref(neg),
        warnings: refs.warnings,
        kb_snapshot_id: String::new(),
    })
}

async fn post_qualify(State(state): State<Shared>, ApiJson(req): ApiJson<QualifyRequest>) -> ApiResult<QualifyResponse> {
    let models: ModelConfig = merge(&state.config.models, req.models.as_ref())?;
    let fusion: FusionConfig = merge(&state.config.fusion, req.overrides.as_ref())?;
    let snap = state.store.snapshot();
    let mut resp = if req.embeddings.is_empty() {
        qualify(&snap, &req, &models, &fusion)?
    } else {
        let mut scratch = (*snap).clone();
        scratch.ingest_embeddings_str(&records_to_lines(&req.embeddings)?)?;
        qualify(&scratch, &req, &models, &fusion)?
    };
    resp.kb_snapshot_id = snap.id();
    Ok(Json(resp))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TreeRequest {
    sample_id: String,
    #[serde(default)]
    overrides: Option<Value>,
}

async fn post_qualify_tree(
    State(state): State<Shared>,
    ApiJson(req): ApiJson<TreeRequest>,
) -> ApiResult<QualificationTrace> {
    let config: TreeConfig = merge(&state.config.tree, req.overrides.as_ref())?;
    config.validate().map_err(|e| ApiError::bad_request(e.to_string()))?;
    let snap = state.store.snapshot();
    if snap.sample(&req.sample_id).is_none() {
        return Err(ApiError::not_found(format!("sample '{}'", req.sample_id)));
    }
    // unknown criteria and missing baselines make the tree unevaluable
    evaluate_tree(&snap, &req.sample_id, &config)
        .map(Json)
        .map_err(|e| ApiError::unprocessable(e.to_string()))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RetrieveRequest {
    criteria: Vec<String>,
    #[serde(default)]
    variant: PromptVariant,
    #[serde(default)]
    cumulative: bool,
    model: String,
    k: usize,
    #[serde(default)]
    mode: RankMode,
}

async fn post_retrieve(
    State(state): State<Shared>,
    ApiJson(req): ApiJson<RetrieveRequest>,
) -> ApiResult<RetrievalResult> {
    let snap = state.store.snapshot();
    if let Some(c) = req.criteria.iter().find(|c| snap.criterion(c).is_none()) {
        return Err(ApiError::not_found(format!("criterion '{c}'")));
    }
    let query = QueryDescriptor { criteria: req.criteria, variant: req.variant, cumulative: req.cumulative };
    let mut result = retrieve(&snap, &query, &req.model, req.k, req.mode)?;
    result.ranked.truncate(result.k);
    Ok(Json(result))
}

#[derive(Debug, Deserialize)]
struct ExtractQuery {
    #[serde(default)]
    ingest: bool,
}

/// Forwards an extraction job to the embedding adapter. With `?ingest=true`
/// the returned records are stored as well.
async fn post_extract(
    State(state): State<Shared>,
    Query(q): Query<ExtractQuery>,
    ApiJson(job): ApiJson<Value>,
) -> Result<Json<Value>, ApiError> {
    let base = state
        .config
        .adapter_url
        .as_deref()
        .ok_or_else(|| ApiError::unprocessable("no embedding adapter configured"))?;
    let url = format!("{}/extract", base.trim_end_matches('/'));
    let resp = state
        .http
        .post(&url)
        .json(&job)
        .send()
        .await
        .map_err(|e| ApiError::new(ErrorCode::Internal, format!("adapter unreachable: {e}")))?;
    let status = resp.status();
    let body: Value = resp
        .json()
        .await
        .map_err(|e| ApiError::new(ErrorCode::Internal, format!("adapter returned invalid JSON: {e}")))?;
    if !status.is_success() {
        return Err(ApiError::unprocessable(format!("adapter responded {status}")).with_detail(body));
    }
    if q.ingest {
        let records: Vec<InterchangeRecord> = serde_json::from_value(body.clone())
            .map_err(|e| ApiError::unprocessable(format!("adapter output is not interchange records: {e}")))?;
        let text = records_to_lines(&records)?;
        write(&state, move |kb| kb.ingest_embeddings_str(&text)).await?;
    }
    Ok(Json(body))
}
