//! JSON API under `/api/v1`.
//!
//! Galleries and sessions live in memory keyed by short sequential ids
//! (`g1`, `s1`, `j1`). Each session sits behind its own mutex so answers to one
//! session are serialized while other sessions proceed.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use qsearch_core::gallery::{gallery_from_json, gallery_to_json};
use qsearch_core::ordering::Objective;
use qsearch_core::query::truthful_queries;
use qsearch_core::session::{sweep_budgets, SessionStatus, StepOutcome};
use qsearch_core::synth::heterogeneous_gallery_config;
use qsearch_core::{
    generate_gallery, ConstraintSet, Error as CoreError, FacetSchema, Gallery, GalleryConfig,
    Identity, QuestionId, ScorerSpec, Session, SessionConfig, TiePolicy, VERSION,
};

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError {
            status,
            message: message.into(),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }

    fn not_found(what: &str, id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, format!("unknown {what} {id:?}"))
    }
}

impl From<CoreError> for ApiError {
    fn from(e: CoreError) -> Self {
        let status = match e {
            CoreError::State(_) => StatusCode::CONFLICT,
            CoreError::Io(_) => StatusCode::INTERNAL_SERVER_ERROR,
            _ => StatusCode::BAD_REQUEST,
        };
        ApiError::new(status, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

/// Parses a request body, reporting serde's field-level diagnostics as 400.
fn parse_body<T: for<'de> Deserialize<'de>>(body: &Bytes) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("invalid body: {e}")))
}

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "status", rename_all = "lowercase")]
enum JobState {
    Running,
    Done { result: Value },
    Failed { error: String },
}

struct StoredSession {
    gallery_id: String,
    session: Session,
}

#[derive(Default)]
pub struct AppState {
    galleries: RwLock<BTreeMap<String, Arc<Gallery>>>,
    sessions: RwLock<BTreeMap<String, Arc<Mutex<StoredSession>>>>,
    jobs: RwLock<BTreeMap<String, JobState>>,
    next_gallery: AtomicU64,
    next_session: AtomicU64,
    next_job: AtomicU64,
}

impl AppState {
    pub fn new() -> Arc<Self> {
        Arc::new(Self::default())
    }

    /// Registers a gallery and returns its id.
    pub fn add_gallery(&self, gallery: Gallery) -> String {
        let id = format!("g{}", self.next_gallery.fetch_add(1, Ordering::SeqCst) + 1);
        self.galleries
            .write()
            .expect("gallery lock")
            .insert(id.clone(), Arc::new(gallery));
        id
    }

    fn gallery(&self, id: &str) -> ApiResult<Arc<Gallery>> {
        self.galleries
            .read()
            .expect("gallery lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found("gallery", id))
    }

    fn session(&self, id: &str) -> ApiResult<Arc<Mutex<StoredSession>>> {
        self.sessions
            .read()
            .expect("session lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found("session", id))
    }

    /// Transcript of every session as JSON lines, keyed by session id.
    pub fn transcripts(&self) -> BTreeMap<String, String> {
        self.sessions
            .read()
            .expect("session lock")
            .iter()
            .map(|(id, s)| {
                let s = s.lock().expect("session mutex");
                (id.clone(), s.session.transcript().to_jsonl())
            })
            .collect()
    }

    /// Writes `<dir>/<session_id>.jsonl` for every session.
    pub fn flush_transcripts(&self, dir: &Path) -> std::io::Result<usize> {
        fs::create_dir_all(dir)?;
        let transcripts = self.transcripts();
        for (id, text) in &transcripts {
            fs::write(dir.join(format!("{id}.jsonl")), text)?;
        }
        Ok(transcripts.len())
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/v1/galleries", post(create_gallery))
        .route("/api/v1/galleries/{gid}", get(get_gallery))
        .route("/api/v1/sessions", post(create_session))
        .route("/api/v1/sessions/{sid}", get(get_session))
        .route("/api/v1/sessions/{sid}/answer", post(answer))
        .route("/api/v1/jobs", post(create_job))
        .route("/api/v1/jobs/{jid}", get(get_job))
        .with_state(state)
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct GenerateRequest {
    n: usize,
    identities: usize,
    #[serde(default)]
    seed: u64,
    /// 0 for uniform facet distributions.
    #[serde(default)]
    skew: f64,
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "lowercase")]
enum GalleryRequest {
    Generate(GenerateRequest),
    Gallery(Value),
}

fn question_json(schema: &FacetSchema, id: QuestionId) -> Value {
    let question = schema.question(id).expect("question ids validated");
    let facets: Vec<Value> = question
        .facets
        .iter()
        .filter_map(|f| schema.facet(*f))
        .map(|f| json!({ "id": f.id, "name": f.name, "domain": f.domain }))
        .collect();
    json!({ "id": question.id, "prompt": question.prompt, "facets": facets })
}

fn gallery_summary(id: &str, gallery: &Gallery) -> Value {
    json!({
        "version": VERSION,
        "gallery_id": id,
        "seed": gallery.seed,
        "n": gallery.n(),
        "identities": gallery.num_identities(),
        "questions": gallery
            .schema
            .question_ids()
            .into_iter()
            .map(|q| question_json(&gallery.schema, q))
            .collect::<Vec<_>>(),
    })
}

async fn create_gallery(
    State(state): State<Arc<AppState>>,
    body: Bytes,
) -> ApiResult<(StatusCode, Json<Value>)> {
    let gallery = match parse_body::<GalleryRequest>(&body)? {
        GalleryRequest::Generate(req) => {
            let config = if req.skew > 0.0 {
                heterogeneous_gallery_config(req.n, req.identities, req.skew, req.seed)
            } else {
                GalleryConfig::uniform(req.n, req.identities, FacetSchema::default_schema())
            };
            generate_gallery(&config, req.seed)?
        }
        GalleryRequest::Gallery(value) => gallery_from_json(&value.to_string())?,
    };
    let id = state.add_gallery(gallery);
    let gallery = state.gallery(&id)?;
    Ok((StatusCode::CREATED, Json(gallery_summary(&id, &gallery))))
}

async fn get_gallery(
    State(state): State<Arc<AppState>>,
    UrlPath(gid): UrlPath<String>,
) -> ApiResult<Json<Value>> {
    let gallery = state.gallery(&gid)?;
    let file: Value = serde_json::from_str(&gallery_to_json(&gallery)).expect("valid json");
    let mut summary = gallery_summary(&gid, &gallery);
    summary["gallery"] = file;
    Ok(Json(summary))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateSessionRequest {
    gallery_id: String,
    budget: f64,
    order: Vec<QuestionId>,
    scorer: ScorerSpec,
    k: usize,
}

fn topk_json(topk: &[(u32, f64)]) -> Vec<Value> {
    topk.iter()
        .map(|(id, s)| json!({ "image_id": id, "score": s }))
        .collect()
}

fn session_view(id: &str, stored: &StoredSession) -> Value {
    let s = &stored.session;
    let schema = &s.gallery().schema;
    json!({
        "version": VERSION,
        "session_id": id,
        "gallery_id": stored.gallery_id,
        "status": s.status(),
        "budget": s.config().budget,
        "order": s.config().order,
        "k": s.config().k_display,
        "scorer": s.config().scorer,
        "asked": s.asked(),
        "entropy_trace": s.entropy_trace(),
        "topk": topk_json(&s.topk()),
        "done": s.status() == SessionStatus::Done,
        "stop_reason": s.stop_reason(),
        "next_question": s.pending_question().map(|q| question_json(schema, q)),
        "transcript": s.transcript().events,
    })
}

async fn create_session(
    State(state): State<Arc<AppState>>,
    body: Bytes,
) -> ApiResult<(StatusCode, Json<Value>)> {
    let req: CreateSessionRequest = parse_body(&body)?;
    let gallery = state.gallery(&req.gallery_id)?;
    let config = SessionConfig {
        scorer: req.scorer,
        order: req.order,
        budget: req.budget,
        k_display: req.k,
        tie_policy: TiePolicy::Expected,
    };
    let session = Session::start(gallery, config, None)?;
    let id = format!("s{}", state.next_session.fetch_add(1, Ordering::SeqCst) + 1);
    let stored = StoredSession {
        gallery_id: req.gallery_id,
        session,
    };
    let mut view = session_view(&id, &stored);
    view["question"] = view["next_question"].clone();
    state
        .sessions
        .write()
        .expect("session lock")
        .insert(id, Arc::new(Mutex::new(stored)));
    Ok((StatusCode::CREATED, Json(view)))
}

async fn get_session(
    State(state): State<Arc<AppState>>,
    UrlPath(sid): UrlPath<String>,
) -> ApiResult<Json<Value>> {
    let session = state.session(&sid)?;
    let stored = session.lock().expect("session mutex");
    Ok(Json(session_view(&sid, &stored)))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct AnswerRequest {
    question_id: QuestionId,
    constraints: ConstraintSet,
}

fn outcome_json(outcome: &StepOutcome, schema: &FacetSchema) -> Value {
    let mut body = json!({
        "entropy": outcome.entropy,
        "topk": topk_json(&outcome.topk),
        "done": outcome.done,
    });
    if let Some(reason) = outcome.stop_reason {
        body["stop_reason"] = json!(reason);
    }
    if let Some(q) = outcome.next_question {
        let question = schema.question(q).expect("question ids validated");
        body["next_question"] = json!({ "id": q, "prompt": question.prompt });
    }
    body
}

async fn answer(
    State(state): State<Arc<AppState>>,
    UrlPath(sid): UrlPath<String>,
    body: Bytes,
) -> ApiResult<Json<Value>> {
    let session = state.session(&sid)?;
    let req: AnswerRequest = parse_body(&body)?;
    let mut stored = session.lock().expect("session mutex");
    let s = &mut stored.session;
    if s.status() == SessionStatus::Done {
        return Err(ApiError::new(
            StatusCode::CONFLICT,
            format!("session {sid} is complete"),
        ));
    }
    if s.pending_question() != Some(req.question_id) {
        return Err(ApiError::bad_request(format!(
            "question_id {} is not the pending question {:?}",
            req.question_id,
            s.pending_question()
        )));
    }
    let outcome = s.submit_answer(req.constraints)?;
    Ok(Json(outcome_json(&outcome, &s.gallery().schema)))
}

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
enum JobRequest {
    /// Greedy ordering fitted on truthful queries for every identity.
    Order {
        gallery_id: String,
        scorer: ScorerSpec,
        #[serde(default)]
        tie: TiePolicy,
    },
    Sweep {
        gallery_id: String,
        scorer: ScorerSpec,
        order: Vec<QuestionId>,
        budgets: Vec<f64>,
        #[serde(default)]
        noise: f64,
        #[serde(default)]
        seed: u64,
        #[serde(default)]
        targets: Option<Vec<Identity>>,
    },
}

fn run_job(gallery: Arc<Gallery>, req: JobRequest) -> qsearch_core::Result<Value> {
    let all: Vec<Identity> = (1..=gallery.num_identities()).collect();
    match req {
        JobRequest::Order { scorer, tie, .. } => {
            let queries = truthful_queries(&gallery, &all)?;
            let seq = Objective::new(&gallery, &queries, scorer, tie)?.greedy()?;
            Ok(
                json!({ "order": seq.order, "mean_rank_curve": seq.mean_rank_curve, "tie_policy": tie, "scorer": scorer }),
            )
        }
        JobRequest::Sweep {
            scorer,
            order,
            budgets,
            noise,
            seed,
            targets,
            ..
        } => {
            let config = SessionConfig::new(scorer, order, 0.0);
            let targets = targets.unwrap_or(all);
            let rows = sweep_budgets(&gallery, &config, &targets, &budgets, noise, seed)?;
            Ok(json!({ "seed": seed, "rows": rows }))
        }
    }
}

async fn create_job(
    State(state): State<Arc<AppState>>,
    body: Bytes,
) -> ApiResult<(StatusCode, Json<Value>)> {
    let req: JobRequest = parse_body(&body)?;
    let gallery_id = match &req {
        JobRequest::Order { gallery_id, .. } | JobRequest::Sweep { gallery_id, .. } => gallery_id,
    };
    let gallery = state.gallery(gallery_id)?;
    let id = format!("j{}", state.next_job.fetch_add(1, Ordering::SeqCst) + 1);
    state
        .jobs
        .write()
        .expect("job lock")
        .insert(id.clone(), JobState::Running);
    let job_state = Arc::clone(&state);
    let job_id = id.clone();
    tokio::task::spawn_blocking(move || {
        let result = match run_job(gallery, req) {
            Ok(result) => JobState::Done { result },
            Err(e) => JobState::Failed {
                error: e.to_string(),
            },
        };
        job_state
            .jobs
            .write()
            .expect("job lock")
            .insert(job_id, result);
    });
    Ok((
        StatusCode::ACCEPTED,
        Json(json!({ "version": VERSION, "job_id": id, "status": "running" })),
    ))
}

async fn get_job(
    State(state): State<Arc<AppState>>,
    UrlPath(jid): UrlPath<String>,
) -> ApiResult<Json<Value>> {
    let job = state
        .jobs
        .read()
        .expect("job lock")
        .get(&jid)
        .cloned()
        .ok_or_else(|| ApiError::not_found("job", &jid))?;
    let mut body = serde_json::to_value(job).expect("job serializes");
    body["job_id"] = json!(jid);
    Ok(Json(body))
}

/// Serves until ctrl-c, then writes every session transcript to `transcript_dir`.
pub async fn serve(
    port: u16,
    state: Arc<AppState>,
    transcript_dir: Option<&Path>,
) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind(("127.0.0.1", port)).await?;
    eprintln!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(Arc::clone(&state)))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    if let Some(dir) = transcript_dir {
        let count = state.flush_transcripts(dir)?;
        eprintln!("flushed {count} transcripts to {}", dir.display());
    }
    Ok(())
}
