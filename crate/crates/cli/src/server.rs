//! The HTTP JSON API. See the README for request and response schemas.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use attriq_core::evaluation::{run_grid_indexed, EvaluationReport, GridBackend, GridInputs, GroundTruth};
use attriq_core::index::read_image_uri;
use attriq_core::pipeline::{CandidateRef, Engine, RetrievalRequest};
use attriq_core::query_gen::{Attribute, AttributeQuery, PromptSpec};
use attriq_core::similarity::{AggregationMode, Measure};
use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::CliError;

/// Status for each error code. Codes not listed are server faults.
const STATUS_TABLE: &[(&str, u16)] = &[
    ("InvalidRequest", 400),
    ("InvalidJson", 400),
    ("InvalidArgument", 400),
    ("InvalidQuery", 400),
    ("UnknownAttribute", 400),
    ("InvalidSettings", 400),
    ("InvalidK", 400),
    ("KTooLarge", 400),
    ("UndecodableImage", 400),
    ("DimensionMismatch", 400),
    ("BackendMismatch", 400),
    ("EmptyVector", 400),
    ("ZeroVector", 400),
    ("EmptyInput", 400),
    ("EmptyQuerySet", 400),
    ("InvalidQuerySet", 400),
    ("InvalidGrid", 400),
    ("NoRelevantDocuments", 400),
    ("NotFound", 404),
    ("RateLimited", 429),
    ("AuthFailure", 502),
    ("MalformedResponse", 502),
    ("ProviderError", 502),
    ("ProviderNotConfigured", 503),
    ("ProviderTimeout", 504),
    ("AllDocumentsFailed", 500),
    ("BackendLoadFailure", 500),
    ("CacheFailure", 500),
    ("CorruptIndex", 500),
    ("DuplicateDocId", 500),
    ("EmptyCorpus", 500),
    ("EmptyDocId", 500),
    ("EmptyReport", 500),
    ("InferenceFailure", 500),
    ("InvalidConfig", 500),
    ("InvalidEntry", 500),
    ("InvalidManifest", 500),
    ("InvalidVector", 500),
    ("InvalidVocabulary", 500),
    ("IoFailure", 500),
    ("RankedListTooShort", 500),
    ("UnlabeledDocument", 500),
    ("VersionUnsupported", 500),
    ("Internal", 500),
];

/// HTTP status for an error code, or `None` for codes missing from the
/// table.
pub fn status_for(code: &str) -> Option<StatusCode> {
    STATUS_TABLE
        .iter()
        .find(|(c, _)| *c == code)
        .map(|(_, s)| StatusCode::from_u16(*s).expect("valid status"))
}

pub fn known_codes() -> impl Iterator<Item = &'static str> {
    STATUS_TABLE.iter().map(|(c, _)| *c)
}

/// `{"error": {"code": ..., "message": ...}}` with the mapped status.
#[derive(Debug)]
pub struct ApiError(CliError);

impl<E: Into<CliError>> From<E> for ApiError {
    fn from(err: E) -> Self {
        Self(err.into())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = status_for(&self.0.code).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        let body = json!({"error": {"code": self.0.code, "message": self.0.message}});
        (status, Json(body)).into_response()
    }
}

fn not_found(what: impl Into<String>) -> ApiError {
    ApiError(CliError::new("NotFound", what))
}

fn parse_body<T: DeserializeOwned>(body: &[u8]) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError(CliError::new("InvalidJson", e.to_string())))
}

/// Runs blocking work off the async executor.
async fn blocking<T, F>(f: F) -> Result<T, ApiError>
where
    F: FnOnce() -> Result<T, ApiError> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError(CliError::new("Internal", format!("worker failed: {e}"))))?
}

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum JobState {
    Running,
    Done { report: Box<EvaluationReport> },
    Failed { error: serde_json::Value },
}

/// Shared, read-only engine plus the evaluation job table.
pub struct AppState {
    pub engine: Arc<Engine>,
    pub truth: Option<Arc<GroundTruth>>,
    jobs: Mutex<HashMap<String, JobState>>,
    next_job: AtomicU64,
}

impl AppState {
    pub fn new(engine: Engine, truth: Option<GroundTruth>) -> Arc<Self> {
        Arc::new(Self {
            engine: Arc::new(engine),
            truth: truth.map(Arc::new),
            jobs: Mutex::new(HashMap::new()),
            next_job: AtomicU64::new(1),
        })
    }

    fn set_job(&self, id: &str, state: JobState) {
        self.jobs.lock().unwrap_or_else(|p| p.into_inner()).insert(id.to_owned(), state);
    }
}

type Shared = State<Arc<AppState>>;

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/health", get(health))
        .route("/api/attributes", get(attributes))
        .route("/api/prompt", post(prompt))
        .route("/api/generate", post(generate))
        .route("/api/retrieve", post(retrieve))
        .route("/api/doc/{id}/image", get(doc_image))
        .route("/api/candidate/{id}", get(candidate_image))
        .route("/api/evaluate", post(evaluate))
        .route("/api/evaluate/{id}", get(evaluation))
        .with_state(state)
}

async fn health(State(st): Shared) -> Json<serde_json::Value> {
    Json(json!({"status": "ok", "index_docs": st.engine.index().len()}))
}

#[derive(Serialize)]
struct AttributesBody<'a> {
    preamble: &'a str,
    attributes: Vec<&'a Attribute>,
}

async fn attributes(State(st): Shared) -> Response {
    let body = AttributesBody {
        preamble: st.engine.preamble(),
        attributes: st.engine.vocabulary().iter().collect(),
    };
    Json(body).into_response()
}

/// Body of `/api/prompt` and `/api/generate`: an attribute query or a
/// literal prompt.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateBody {
    #[serde(default)]
    pub attribute_query: Option<AttributeQuery>,
    #[serde(default)]
    pub prompt: Option<PromptSpec>,
    #[serde(default = "one")]
    pub num_candidates: u32,
}

fn one() -> u32 {
    1
}

fn prompt_of(engine: &Engine, body: &GenerateBody) -> Result<PromptSpec, ApiError> {
    if body.num_candidates == 0 {
        return Err(ApiError(CliError::new("InvalidRequest", "num_candidates must be at least 1")));
    }
    match (&body.attribute_query, &body.prompt) {
        (Some(q), None) => Ok(engine.prompt_for(q, body.num_candidates)?),
        (None, Some(spec)) => {
            let spec = spec.clone().with_num_images(body.num_candidates);
            spec.validate()?;
            Ok(spec)
        }
        _ => Err(ApiError(CliError::new(
            "InvalidRequest",
            "give exactly one of attribute_query and prompt",
        ))),
    }
}

async fn prompt(State(st): Shared, body: Bytes) -> Result<Json<PromptSpec>, ApiError> {
    let body: GenerateBody = parse_body(&body)?;
    Ok(Json(prompt_of(&st.engine, &body)?))
}

#[derive(Serialize)]
struct GenerateResponse {
    prompt: PromptSpec,
    candidates: Vec<CandidateRef>,
}

async fn generate(State(st): Shared, body: Bytes) -> Result<Json<GenerateResponse>, ApiError> {
    let body: GenerateBody = parse_body(&body)?;
    blocking(move || {
        let spec = prompt_of(&st.engine, &body)?;
        let images = st.engine.generate_candidates(&spec)?;
        let bytes: Vec<&[u8]> = images.iter().map(|g| g.image_bytes.as_slice()).collect();
        let all: Vec<usize> = (0..images.len()).collect();
        let candidates = st.engine.candidate_refs(&spec, &bytes, &all);
        Ok(Json(GenerateResponse { prompt: spec, candidates }))
    })
    .await
}

async fn retrieve(State(st): Shared, body: Bytes) -> Result<Response, ApiError> {
    let request: RetrievalRequest = parse_body(&body)?;
    blocking(move || Ok(Json(st.engine.retrieve(&request)?).into_response())).await
}

fn image_response(bytes: Vec<u8>) -> Response {
    let mime = image::guess_format(&bytes)
        .map(|f| f.to_mime_type())
        .unwrap_or("application/octet-stream");
    ([(header::CONTENT_TYPE, mime)], bytes).into_response()
}

async fn doc_image(State(st): Shared, Path(id): Path<String>) -> Result<Response, ApiError> {
    blocking(move || {
        let uri = st
            .engine
            .document_uri(&id)
            .filter(|_| st.engine.index().position(&id).is_some())
            .ok_or_else(|| not_found(format!("no indexed document `{id}` with a known image")))?;
        Ok(image_response(read_image_uri(uri)?))
    })
    .await
}

async fn candidate_image(State(st): Shared, Path(id): Path<String>) -> Result<Response, ApiError> {
    blocking(move || {
        let image = st
            .engine
            .cache()
            .and_then(|c| c.candidate(&id))
            .ok_or_else(|| not_found(format!("no cached candidate `{id}`")))?;
        Ok(image_response(image.image_bytes))
    })
    .await
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluateBody {
    pub queries: Vec<AttributeQuery>,
    #[serde(default = "all_measures")]
    pub measures: Vec<Measure>,
    #[serde(default = "one")]
    pub num_candidates: u32,
    #[serde(default)]
    pub aggregation_mode: AggregationMode,
}

fn all_measures() -> Vec<Measure> {
    vec![Measure::L1, Measure::L2, Measure::Cosine]
}

fn run_evaluation(st: &AppState, truth: &GroundTruth, body: &EvaluateBody) -> Result<EvaluationReport, ApiError> {
    let mut images = HashMap::new();
    for q in &body.queries {
        let spec = st.engine.prompt_for(q, body.num_candidates)?;
        images.insert(q.query_id.clone(), st.engine.generate_candidates(&spec)?);
    }
    let grid = [GridBackend {
        backend: st.engine.backend(),
        index: st.engine.index(),
    }];
    Ok(run_grid_indexed(
        &grid,
        GridInputs {
            truth,
            queries: &body.queries,
            query_images: &images,
            measures: &body.measures,
            aggregation: body.aggregation_mode,
        },
    )?)
}

async fn evaluate(State(st): Shared, body: Bytes) -> Result<Response, ApiError> {
    let body: EvaluateBody = parse_body(&body)?;
    let truth = st
        .truth
        .clone()
        .ok_or_else(|| ApiError(CliError::new("InvalidRequest", "the service was started without a manifest")))?;
    let id = format!("job-{}", st.next_job.fetch_add(1, Ordering::Relaxed));
    st.set_job(&id, JobState::Running);
    let job = id.clone();
    tokio::task::spawn_blocking(move || {
        let state = match run_evaluation(&st, &truth, &body) {
            Ok(report) => JobState::Done {
                report: Box::new(report),
            },
            Err(ApiError(e)) => JobState::Failed {
                error: json!({"code": e.code, "message": e.message}),
            },
        };
        st.set_job(&job, state);
    });
    Ok((StatusCode::ACCEPTED, Json(json!({"job_id": id}))).into_response())
}

async fn evaluation(State(st): Shared, Path(id): Path<String>) -> Result<Response, ApiError> {
    let jobs = st.jobs.lock().unwrap_or_else(|p| p.into_inner());
    let job = jobs.get(&id).ok_or_else(|| not_found(format!("no evaluation job `{id}`")))?;
    let mut body = serde_json::to_value(job).expect("job serializes");
    body["job_id"] = json!(id);
    Ok(Json(body).into_response())
}

/// Serves until ctrl-c. Prints `listening on http://<addr>` once bound.
pub async fn serve(state: Arc<AppState>, listener: tokio::net::TcpListener) -> std::io::Result<()> {
    let addr = listener.local_addr()?;
    println!("listening on http://{addr}");
    use std::io::Write;
    std::io::stdout().flush()?;
    tracing::info!(%addr, docs = state.engine.index().len(), "serving");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn status_table_has_no_duplicates() {
        let mut codes: Vec<_> = known_codes().collect();
        let n = codes.len();
        codes.sort();
        codes.dedup();
        assert_eq!(codes.len(), n);
        assert_eq!(status_for("KTooLarge"), Some(StatusCode::BAD_REQUEST));
        assert_eq!(status_for("RateLimited"), Some(StatusCode::TOO_MANY_REQUESTS));
        assert_eq!(status_for("nope"), None);
    }
}
