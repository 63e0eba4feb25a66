//! JSON-over-HTTP facade for suggestion and proof generation.
//!
//! The server holds no session state: every request carries the theorem,
//! the proof so far and the knowledge setting. Long proof searches answer
//! `202 Accepted` with a job token to poll at `/v1/jobs/{token}`.

use std::collections::{BTreeSet, HashMap};
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::rejection::QueryRejection;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::oneshot;

use crate::corpus::{normalize_title, parse_mentions, Corpus, RefKind, Reference};
use crate::decoder::{decode, DecodeConfig, DecodeError, DecodeProblem, TraceSummary};
use crate::harness::{constraint_titles, sample_next_steps, Retrievals, SuggestParams};
use crate::lmbackend::{BackendError, RemoteConfig, Sampler, StreamKey};
use crate::metrics::{score_proof, MetricReport};
use crate::promptgen::KnowledgeSetting;

pub const SCHEMA_VERSION: &str = "1";

/// JSON schema of every response body.
pub const RESPONSE_SCHEMA: &str = include_str!("../schema/service.schema.json");

const DEFAULT_PAGE_SIZE: usize = 50;
const MAX_PAGE_SIZE: usize = 500;
const RETRY_AFTER_SECS: u64 = 5;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[default]
    Mock,
    Remote,
}

/// Server settings, read from a TOML file and `GROUNDPROVER_*` variables.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceConfig {
    pub bind: String,
    pub corpus_path: Option<PathBuf>,
    pub retrievals_path: Option<PathBuf>,
    pub backend: BackendKind,
    pub mock_script: Option<PathBuf>,
    pub seed: u64,
    /// Proof requests running longer than this become polled jobs.
    pub async_threshold_secs: f64,
    pub remote: RemoteConfig,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            bind: "127.0.0.1:8080".into(),
            corpus_path: None,
            retrievals_path: None,
            backend: BackendKind::Mock,
            mock_script: None,
            seed: 0,
            async_threshold_secs: 15.0,
            remote: RemoteConfig::default(),
        }
    }
}

impl ServiceConfig {
    pub fn apply_env(mut self) -> Self {
        let var = |k: &str| std::env::var(k).ok().filter(|v| !v.is_empty());
        if let Some(v) = var("GROUNDPROVER_BIND") {
            self.bind = v;
        }
        if let Some(v) = var("GROUNDPROVER_CORPUS") {
            self.corpus_path = Some(v.into());
        }
        if let Some(v) = var("GROUNDPROVER_RETRIEVALS") {
            self.retrievals_path = Some(v.into());
        }
        if let Some(v) = var("GROUNDPROVER_MOCK_SCRIPT") {
            self.mock_script = Some(v.into());
        }
        if let Some(v) = var("GROUNDPROVER_ASYNC_THRESHOLD_SECS").and_then(|v| v.parse().ok()) {
            self.async_threshold_secs = v;
        }
        self.remote = self.remote.apply_env();
        self
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
    pub retry_after_secs: Option<u64>,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            code,
            message: message.into(),
            retry_after_secs: None,
        }
    }

    fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", message)
    }

    fn invalid(message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_request", message)
    }

    fn backend(e: &BackendError) -> Self {
        let mut err = Self::new(StatusCode::BAD_GATEWAY, "backend_error", e.to_string());
        if e.is_retryable() {
            err.retry_after_secs = Some(RETRY_AFTER_SECS);
        }
        err
    }

    fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }
}

impl From<DecodeError> for ApiError {
    fn from(e: DecodeError) -> Self {
        match &e {
            DecodeError::Backend { source, .. } => ApiError::backend(source),
            DecodeError::NoViableProof { .. } => Self::new(StatusCode::BAD_GATEWAY, "no_viable_proof", e.to_string()),
            DecodeError::InvalidConfig(_) | DecodeError::Prompt(_) => ApiError::invalid(e.to_string()),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({
            "schema_version": SCHEMA_VERSION,
            "error": {
                "code": self.code,
                "message": self.message,
                "retry_after_secs": self.retry_after_secs,
            }
        });
        let mut resp = (self.status, Json(body)).into_response();
        if let Some(s) = self.retry_after_secs {
            resp.headers_mut()
                .insert(header::RETRY_AFTER, HeaderValue::from(s));
        }
        resp
    }
}

type ApiResult<T> = Result<T, ApiError>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InlineTheorem {
    pub title: String,
    #[serde(default)]
    pub content: Vec<String>,
}

/// Which theorem, and which titles to condition on.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TheoremSpec {
    pub theorem_id: Option<u64>,
    pub theorem: Option<InlineTheorem>,
    pub setting: KnowledgeSetting,
    /// Explicit titles; override `setting`.
    pub constraint_titles: Option<Vec<String>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuggestRequest {
    #[serde(flatten)]
    pub target: TheoremSpec,
    #[serde(default)]
    pub proof_so_far: Vec<String>,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default)]
    pub seed: Option<u64>,
}

fn default_k() -> usize {
    3
}

fn default_temperature() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuggestionOut {
    pub text: String,
    pub logprob: f64,
    /// Constraint titles mentioned by this suggestion.
    pub covered_titles: Vec<String>,
    /// Every title the suggestion mentions.
    pub mentioned_titles: Vec<String>,
    pub terminated: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cost {
    pub generated_tokens: u64,
    pub samples: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuggestResponse {
    pub schema_version: String,
    pub theorem_id: Option<u64>,
    pub constraint_titles: Vec<String>,
    pub suggestions: Vec<SuggestionOut>,
    pub cost: Cost,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProveRequest {
    #[serde(flatten)]
    pub target: TheoremSpec,
    #[serde(default)]
    pub decode: DecodeConfig,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProveResponse {
    pub schema_version: String,
    pub status: String,
    pub theorem_id: Option<u64>,
    pub constraint_titles: Vec<String>,
    pub steps: Vec<String>,
    pub covered_titles: Vec<String>,
    pub cum_logprob: f64,
    pub metrics: Option<MetricReport>,
    pub trace: TraceSummary,
}

enum Job {
    Pending,
    Done(ApiResult<ProveResponse>),
}

#[derive(Clone)]
pub struct AppState {
    corpus: Arc<Corpus>,
    backend: Arc<dyn Sampler>,
    retrievals: Option<Arc<Retrievals>>,
    async_threshold: Duration,
    jobs: Arc<Mutex<HashMap<String, Job>>>,
    next_job: Arc<AtomicU64>,
    backend_name: &'static str,
}

impl AppState {
    pub fn new(corpus: Corpus, backend: Arc<dyn Sampler>, backend_kind: BackendKind) -> Self {
        AppState {
            corpus: Arc::new(corpus),
            backend,
            retrievals: None,
            async_threshold: Duration::from_secs(15),
            jobs: Arc::default(),
            next_job: Arc::default(),
            backend_name: match backend_kind {
                BackendKind::Mock => "mock",
                BackendKind::Remote => "remote",
            },
        }
    }

    pub fn with_retrievals(mut self, retrievals: Retrievals) -> Self {
        self.retrievals = Some(Arc::new(retrievals));
        self
    }

    pub fn with_async_threshold(mut self, threshold: Duration) -> Self {
        self.async_threshold = threshold;
        self
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/v1/schema", get(schema))
        .route("/v1/suggest", post(suggest))
        .route("/v1/prove", post(prove))
        .route("/v1/jobs/{token}", get(job))
        .route("/v1/theorems", get(search))
        .route("/v1/theorems/{id}", get(theorem))
        .with_state(state)
}

pub async fn serve(state: AppState, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(%addr, "listening");
    axum::serve(listener, router(state)).await
}

fn parse_body<T: DeserializeOwned>(body: &Bytes) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError::invalid(format!("request body: {e}")))
}

async fn health(State(st): State<AppState>) -> Json<Value> {
    Json(json!({
        "schema_version": SCHEMA_VERSION,
        "status": "ok",
        "references": st.corpus.num_references(),
        "backend": st.backend_name,
    }))
}

async fn schema() -> Response {
    ([(header::CONTENT_TYPE, "application/schema+json")], RESPONSE_SCHEMA).into_response()
}

/// The theorem to prove, its gold proof when known, and the titles to use.
struct Resolved {
    theorem: Reference,
    theorem_id: Option<u64>,
    titles: Vec<String>,
    has_gold: bool,
}

fn resolve_target(st: &AppState, spec: &TheoremSpec) -> ApiResult<Resolved> {
    let (theorem, theorem_id) = match (&spec.theorem_id, &spec.theorem) {
        (Some(_), Some(_)) => return Err(ApiError::invalid("give either theorem_id or theorem, not both")),
        (None, None) => return Err(ApiError::invalid("theorem_id or theorem is required")),
        (Some(id), None) => {
            let r = st
                .corpus
                .reference_by_id(*id)
                .ok_or_else(|| ApiError::not_found(format!("unknown theorem_id {id}")))?;
            (r.clone(), Some(*id))
        }
        (None, Some(inline)) => {
            if inline.title.trim().is_empty() {
                return Err(ApiError::invalid("inline theorem needs a title"));
            }
            (
                Reference::new(0, RefKind::Theorem, inline.title.clone(), inline.content.clone()),
                None,
            )
        }
    };
    let gold = theorem_id.and_then(|id| st.corpus.gold_proof(id));
    let titles = match &spec.constraint_titles {
        Some(t) => t.clone(),
        None => match (spec.setting, gold, theorem_id) {
            (KnowledgeSetting::None, _, _) => Vec::new(),
            (KnowledgeSetting::Provided, Some(g), Some(id)) => {
                constraint_titles(KnowledgeSetting::Provided, g, id, None).map_err(ApiError::invalid)?
            }
            (KnowledgeSetting::Provided, _, _) => {
                return Err(ApiError::invalid("the provided setting needs a theorem with a gold proof"))
            }
            (KnowledgeSetting::Retrieved, _, Some(id)) => st
                .retrievals
                .as_ref()
                .and_then(|r| r.lists.get(&id))
                .map(|l| l.iter().take(crate::promptgen::RETRIEVED_TOP_K).cloned().collect())
                .ok_or_else(|| ApiError::invalid(format!("no retrievals loaded for theorem {id}")))?,
            (KnowledgeSetting::Retrieved, _, None) => {
                return Err(ApiError::invalid("the retrieved setting needs a theorem_id"))
            }
        },
    };
    Ok(Resolved {
        theorem,
        theorem_id,
        titles,
        has_gold: gold.is_some(),
    })
}

fn salt(seed: Option<u64>, theorem_id: Option<u64>) -> u64 {
    seed.unwrap_or(0).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ theorem_id.unwrap_or(0)
}

async fn suggest(State(st): State<AppState>, body: Bytes) -> ApiResult<Json<SuggestResponse>> {
    let req: SuggestRequest = parse_body(&body)?;
    if req.k == 0 {
        return Err(ApiError::invalid("k must be at least 1"));
    }
    if !(req.temperature >= 0.0 && req.temperature.is_finite()) {
        return Err(ApiError::invalid("temperature must be finite and non-negative"));
    }
    let target = resolve_target(&st, &req.target)?;
    let backend = st.backend.clone();
    let result = tokio::task::spawn_blocking(move || {
        let config = DecodeConfig::default();
        let params = SuggestParams {
            decode: &config,
            k: req.k,
            temperature: req.temperature,
            stream: StreamKey {
                salt: salt(req.seed, target.theorem_id),
                iteration: req.proof_so_far.len() as u64,
                beam: 0,
                group: 0,
            },
        };
        let out = sample_next_steps(&target.theorem, &target.titles, &req.proof_so_far, params, &*backend);
        (target, out)
    })
    .await
    .map_err(|e| ApiError::internal(e.to_string()))?;
    let (target, suggestions) = result;
    let suggestions = suggestions?;
    let constraints: BTreeSet<String> = target.titles.iter().map(|t| normalize_title(t)).collect();
    let cost = Cost {
        generated_tokens: suggestions.iter().map(|s| s.token_count as u64).sum(),
        samples: suggestions.len() as u64,
    };
    let suggestions = suggestions
        .into_iter()
        .take(req.k)
        .map(|s| {
            let mentioned: BTreeSet<String> = parse_mentions(&s.text).iter().map(|m| m.canonical_title()).collect();
            SuggestionOut {
                covered_titles: mentioned.intersection(&constraints).cloned().collect(),
                mentioned_titles: mentioned.into_iter().collect(),
                text: s.text,
                logprob: s.logprob,
                terminated: s.terminated,
            }
        })
        .collect();
    Ok(Json(SuggestResponse {
        schema_version: SCHEMA_VERSION.into(),
        theorem_id: target.theorem_id,
        constraint_titles: target.titles,
        suggestions,
        cost,
    }))
}

fn run_prove(corpus: &Corpus, backend: &dyn Sampler, target: &Resolved, req: &ProveRequest) -> ApiResult<ProveResponse> {
    let problem = DecodeProblem {
        theorem: &target.theorem,
        ref_titles: &target.titles,
        salt: salt(req.seed, target.theorem_id),
    };
    let (best, trace) = decode(&problem, backend, &req.decode)?;
    let metrics = match (target.has_gold, target.theorem_id) {
        (true, Some(id)) => corpus.gold_proof(id).map(|gold| {
            let generated = crate::corpus::ProofDocument::from_steps(
                best.steps.iter().map(|s| crate::corpus::ProofStep::from_text(s)).collect(),
            );
            score_proof(&generated, gold, corpus)
        }),
        _ => None,
    };
    Ok(ProveResponse {
        schema_version: SCHEMA_VERSION.into(),
        status: "done".into(),
        theorem_id: target.theorem_id,
        constraint_titles: target.titles.clone(),
        covered_titles: best.covered_titles.into_iter().collect(),
        steps: best.steps,
        cum_logprob: best.cum_logprob,
        metrics,
        trace: trace.summary(),
    })
}

fn pending_body(token: &str) -> Value {
    json!({
        "schema_version": SCHEMA_VERSION,
        "status": "pending",
        "job": token,
        "poll": format!("/v1/jobs/{token}"),
    })
}

async fn prove(State(st): State<AppState>, body: Bytes) -> ApiResult<Response> {
    let req: ProveRequest = parse_body(&body)?;
    req.decode.validate().map_err(ApiError::from)?;
    if req.decode.mode.is_stepwise() && req.target.constraint_titles.is_none() && req.target.setting != KnowledgeSetting::Provided {
        return Err(ApiError::invalid(
            "stepwise decoding needs provided references or explicit constraint_titles",
        ));
    }
    let target = resolve_target(&st, &req.target)?;

    let token = format!("job-{}", st.next_job.fetch_add(1, Ordering::Relaxed) + 1);
    st.jobs.lock().unwrap().insert(token.clone(), Job::Pending);
    let (tx, rx) = oneshot::channel();
    let (corpus, backend, jobs, job_token) = (st.corpus.clone(), st.backend.clone(), st.jobs.clone(), token.clone());
    tokio::spawn(async move {
        let result = tokio::task::spawn_blocking(move || run_prove(&corpus, &*backend, &target, &req))
            .await
            .unwrap_or_else(|e| Err(ApiError::internal(e.to_string())));
        jobs.lock().unwrap().insert(job_token, Job::Done(result.clone()));
        let _ = tx.send(result);
    });

    match tokio::time::timeout(st.async_threshold, rx).await {
        Ok(Ok(result)) => {
            st.jobs.lock().unwrap().remove(&token);
            result.map(|r| Json(r).into_response())
        }
        Ok(Err(_)) => Err(ApiError::internal("proof task vanished")),
        Err(_) => Ok((StatusCode::ACCEPTED, Json(pending_body(&token))).into_response()),
    }
}

async fn job(State(st): State<AppState>, Path(token): Path<String>) -> ApiResult<Response> {
    let jobs = st.jobs.lock().unwrap();
    match jobs.get(&token) {
        None => Err(ApiError::not_found(format!("unknown job {token}"))),
        Some(Job::Pending) => Ok((StatusCode::ACCEPTED, Json(pending_body(&token))).into_response()),
        Some(Job::Done(result)) => result.clone().map(|r| Json(r).into_response()),
    }
}

fn reference_summary(r: &Reference) -> Value {
    json!({"id": r.id, "kind": r.kind.as_str(), "title": r.title})
}

async fn theorem(State(st): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let id: u64 = id
        .parse()
        .map_err(|_| ApiError::not_found(format!("unknown theorem {id:?}")))?;
    let r = st
        .corpus
        .reference_by_id(id)
        .ok_or_else(|| ApiError::not_found(format!("unknown theorem {id}")))?;
    let gold = st.corpus.gold_proof(id);
    Ok(Json(json!({
        "schema_version": SCHEMA_VERSION,
        "id": r.id,
        "kind": r.kind.as_str(),
        "title": r.title,
        "content": r.content,
        "split": st.corpus.split_of(id).map(|s| s.as_str()),
        "gold_proof": gold.map(|g| g.steps.iter().map(|s| s.raw.clone()).collect::<Vec<_>>()),
        "gold_titles": gold.map(|g| g.ordered_ref_titles()),
    })))
}

#[derive(Debug, Deserialize)]
struct SearchParams {
    #[serde(default)]
    query: String,
    #[serde(default)]
    page: usize,
    per_page: Option<usize>,
}

async fn search(
    State(st): State<AppState>,
    params: Result<Query<SearchParams>, QueryRejection>,
) -> ApiResult<Json<Value>> {
    let Query(params) = params.map_err(|e| ApiError::invalid(e.body_text()))?;
    let per_page = params.per_page.unwrap_or(DEFAULT_PAGE_SIZE);
    if per_page == 0 || per_page > MAX_PAGE_SIZE {
        return Err(ApiError::invalid(format!("per_page must be in 1..={MAX_PAGE_SIZE}")));
    }
    let hits = st.corpus.search_titles(&params.query);
    let results: Vec<Value> = hits
        .iter()
        .skip(params.page.saturating_mul(per_page))
        .take(per_page)
        .map(|r| reference_summary(r))
        .collect();
    Ok(Json(json!({
        "schema_version": SCHEMA_VERSION,
        "query": params.query,
        "page": params.page,
        "per_page": per_page,
        "total": hits.len(),
        "results": results,
    })))
}
