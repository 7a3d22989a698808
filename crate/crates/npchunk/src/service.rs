//! HTTP JSON interface to annotation and rule-writing sessions.
//!
//! Each session is a [`Session`] guarded by its own async mutex, so
//! requests to one session are applied one at a time while different
//! sessions proceed in parallel. Every accepted command is appended to
//! the session's log before the response is sent; if the append fails
//! the in-memory session is rolled back.
//!
//! Once an annotation session is waiting for its next batch, the
//! selection is started in the background on a bounded worker pool.
//! `GET /sessions/{id}/batch` then waits for that result.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex as StdMutex};

use axum::extract::rejection::JsonRejection;
use axum::extract::{FromRequest, Path, Request, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use npchunk_core::corpus::{ChunkSpan, Labeling, Sentence, SentenceId, Token};
use npchunk_core::metrics::EvalReport;
use npchunk_core::session::{
    evaluate_rules, Command, LogEntry, Mode, Outcome, Phase, RulesResult, Session, SessionConfig,
    SessionCorpus, SessionError, SessionState, SubmitAck,
};
use serde::{Deserialize, Serialize};
use tokio::sync::{Mutex, Semaphore};
use tokio::task::JoinHandle;

use crate::store::{log_to_jsonl, state_hash, LogStore};
use crate::trainer::ThreadedTrainer;

/// Version of the wire format described by `schema/session-api.v1.json`.
pub const SCHEMA_VERSION: &str = "1";

pub type Clock = Arc<dyn Fn() -> u64 + Send + Sync>;

type Selection = Result<Vec<SentenceId>, SessionError>;

struct Precompute {
    /// `SessionState::events` the selection was started from.
    events: u64,
    handle: JoinHandle<Selection>,
}

struct Slot {
    session: Session,
    corpus: Arc<SessionCorpus>,
    precompute: Option<Precompute>,
}

pub struct AppState {
    corpora: HashMap<String, Arc<SessionCorpus>>,
    sessions: StdMutex<HashMap<String, Arc<Mutex<Slot>>>>,
    store: Option<LogStore>,
    workers: Arc<Semaphore>,
    trainer: ThreadedTrainer,
    clock: Clock,
    next_id: AtomicU64,
}

pub struct ServiceOptions {
    pub store: Option<LogStore>,
    /// Selections that may run at once across all sessions.
    pub workers: usize,
    pub trainer: ThreadedTrainer,
    pub clock: Clock,
    /// Re-run every logged selection when loading sessions at startup.
    pub verify_on_load: bool,
}

impl Default for ServiceOptions {
    fn default() -> Self {
        ServiceOptions {
            store: None,
            workers: 2,
            trainer: ThreadedTrainer::default(),
            clock: Arc::new(crate::now_ms),
            verify_on_load: false,
        }
    }
}

impl AppState {
    /// Builds the service and replays every log found in the store.
    pub fn new(
        corpora: Vec<SessionCorpus>,
        options: ServiceOptions,
    ) -> crate::Result<Arc<AppState>> {
        let corpora: HashMap<String, Arc<SessionCorpus>> = corpora
            .into_iter()
            .map(|c| (c.name.clone(), Arc::new(c)))
            .collect();
        let mut sessions = HashMap::new();
        let mut max_id = 0;
        if let Some(store) = &options.store {
            for (id, entries) in store.load_all()? {
                let corpus = entries
                    .first()
                    .and_then(|e| match &e.command {
                        Command::Create { config, .. } => Some(config),
                        _ => None,
                    })
                    .ok_or_else(|| crate::Error::Other(format!("session {id}: log does not start with create")))
                    .and_then(|config| {
                        let corpus = corpora.get(&config.corpus).ok_or_else(|| {
                            crate::Error::Other(format!("session {id}: corpus `{}` is not loaded", config.corpus))
                        })?;
                        match (&config.corpus_digest, &corpus.digest) {
                            (Some(a), Some(b)) if a != b => Err(crate::Error::Other(format!(
                                "session {id}: corpus `{}` has changed since the session was created",
                                config.corpus
                            ))),
                            _ => Ok(corpus.clone()),
                        }
                    })?;
                let verify = options.verify_on_load.then_some(&options.trainer);
                let session = Session::replay(&entries, &corpus, verify)
                    .map_err(|e| crate::Error::Other(format!("session {id}: {e}")))?;
                log::info!("loaded session {id} ({} events)", entries.len());
                if let Some(n) = id.strip_prefix('s').and_then(|n| n.parse::<u64>().ok()) {
                    max_id = max_id.max(n);
                }
                sessions.insert(
                    id,
                    Arc::new(Mutex::new(Slot {
                        session,
                        corpus,
                        precompute: None,
                    })),
                );
            }
        }
        Ok(Arc::new(AppState {
            corpora,
            sessions: StdMutex::new(sessions),
            store: options.store,
            workers: Arc::new(Semaphore::new(options.workers.max(1))),
            trainer: options.trainer,
            clock: options.clock,
            next_id: AtomicU64::new(max_id + 1),
        }))
    }

    fn slot(&self, id: &str) -> Result<Arc<Mutex<Slot>>, ApiError> {
        self.sessions
            .lock()
            .expect("session map poisoned")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(format!("no session `{id}`")))
    }

    fn now(&self) -> u64 {
        (self.clock)()
    }

    fn persist(&self, id: &str, entry: &LogEntry) -> crate::Result<()> {
        match &self.store {
            Some(store) => store.append(id, entry),
            None => Ok(()),
        }
    }

    /// Runs one command against a locked slot, logging it durably.
    fn commit(
        &self,
        id: &str,
        slot: &mut Slot,
        run: impl FnOnce(&mut Session, &SessionCorpus) -> Result<Outcome, SessionError>,
    ) -> Result<Outcome, ApiError> {
        let backup = slot.session.clone();
        let corpus = slot.corpus.clone();
        let outcome = run(&mut slot.session, &corpus)?;
        let entry = slot
            .session
            .log()
            .last()
            .expect("session log is never empty");
        if let Err(e) = self.persist(id, entry) {
            log::error!("session {id}: {e}");
            slot.session = backup;
            return Err(ApiError::new(
                StatusCode::INTERNAL_SERVER_ERROR,
                "storage",
                e.to_string(),
            ));
        }
        Ok(outcome)
    }

    fn start_selection(&self, slot: &mut Slot) {
        let state = slot.session.state();
        let waiting = state.mode == Mode::Annotation
            && state.phase == Phase::Active
            && state.pending.is_none();
        if !waiting {
            slot.precompute = None;
            return;
        }
        if slot
            .precompute
            .as_ref()
            .is_some_and(|p| p.events == state.events)
        {
            return;
        }
        let handle = self.spawn_selection(state.clone(), slot.corpus.clone());
        slot.precompute = Some(Precompute {
            events: state.events,
            handle,
        });
    }

    fn spawn_selection(
        &self,
        state: SessionState,
        corpus: Arc<SessionCorpus>,
    ) -> JoinHandle<Selection> {
        let workers = self.workers.clone();
        let trainer = self.trainer;
        tokio::spawn(async move {
            let _permit = workers.acquire_owned().await.expect("worker pool closed");
            tokio::task::spawn_blocking(move || state.select_next(&corpus, &trainer))
                .await
                .expect("selection task panicked")
        })
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/feedback", post(post_feedback))
        .route("/sessions/{id}/batch", get(get_batch))
        .route("/sessions/{id}/annotations", post(post_annotations))
        .route("/sessions/{id}/rules", post(post_rules))
        .route("/sessions/{id}/final", post(post_final))
        .route("/sessions/{id}/reference", get(get_reference))
        .route("/sessions/{id}/events", get(get_events))
        .with_state(state)
}

/// Serves until Ctrl-C.
pub async fn serve(listener: tokio::net::TcpListener, state: Arc<AppState>) -> std::io::Result<()> {
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

// Wire types.

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireToken {
    pub w: String,
    pub p: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireSentence {
    pub id: SentenceId,
    pub tokens: Vec<WireToken>,
}

impl From<&Sentence> for WireSentence {
    fn from(s: &Sentence) -> Self {
        WireSentence {
            id: s.id,
            tokens: s
                .tokens
                .iter()
                .map(|Token { word, pos }| WireToken {
                    w: word.clone(),
                    p: pos.clone(),
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceSentence {
    pub id: SentenceId,
    pub tokens: Vec<WireToken>,
    pub tags: Labeling,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateRequest {
    pub mode: Mode,
    #[serde(default)]
    pub config: SessionConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Created {
    pub id: String,
    pub phase: Phase,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeedbackRequest {
    pub labeling: Option<Labeling>,
    #[serde(default)]
    pub stop: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeedbackResponse {
    pub phase: Phase,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gold: Option<Labeling>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub missing: Option<Vec<ChunkSpan>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub extra: Option<Vec<ChunkSpan>>,
    pub next: Option<WireSentence>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BatchResponse {
    pub batch_id: u64,
    pub served_ms: u64,
    pub sentences: Vec<WireSentence>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationsRequest {
    pub batch_id: u64,
    pub labelings: Vec<Labeling>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RulesRequest {
    pub text: String,
}

/// Human labelings of the final sentences. Empty for a rule-writing
/// session, where it just ends the session.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FinalRequest {
    #[serde(default)]
    pub labelings: Vec<Labeling>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FinalResponse {
    pub phase: Phase,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub report: Option<EvalReport>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionView {
    pub schema_version: String,
    pub id: String,
    pub mode: Mode,
    pub phase: Phase,
    pub config: SessionConfig,
    pub iteration: usize,
    pub feedback_done: usize,
    pub annotated_sentences: usize,
    pub annotated_words: usize,
    pub feedback_sentence: Option<WireSentence>,
    pub pending: Option<BatchResponse>,
    pub final_sentences: Option<Vec<WireSentence>>,
    pub final_report: Option<EvalReport>,
    pub rules_text: Option<String>,
    pub rule_submissions: usize,
    pub rules_result: Option<RulesResult>,
    pub created_ms: u64,
    pub updated_ms: u64,
    pub events: u64,
    pub state_hash: String,
}

// Errors.

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub kind: String,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, kind: &str, error: impl Into<String>) -> Self {
        ApiError {
            status,
            body: ErrorBody {
                error: error.into(),
                kind: kind.to_string(),
            },
        }
    }

    fn not_found(msg: String) -> Self {
        ApiError::new(StatusCode::NOT_FOUND, "not_found", msg)
    }

    fn invalid(msg: impl Into<String>) -> Self {
        ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_request", msg)
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        use SessionError::*;
        let (status, kind) = match &e {
            WrongPhase { .. } => (StatusCode::CONFLICT, "wrong_phase"),
            WrongMode(_) => (StatusCode::CONFLICT, "wrong_mode"),
            BatchPending(_) => (StatusCode::CONFLICT, "batch_pending"),
            NoPendingBatch => (StatusCode::CONFLICT, "no_pending_batch"),
            BatchIdMismatch { .. } => (StatusCode::CONFLICT, "batch_id_mismatch"),
            EmptyBatch => (StatusCode::CONFLICT, "pool_empty"),
            AlreadyCreated => (StatusCode::CONFLICT, "already_created"),
            CountMismatch { .. } => (StatusCode::UNPROCESSABLE_ENTITY, "count_mismatch"),
            LengthMismatch { .. } => (StatusCode::UNPROCESSABLE_ENTITY, "length_mismatch"),
            NotInPool(_) => (StatusCode::UNPROCESSABLE_ENTITY, "not_in_pool"),
            BatchTooLarge { .. } => (StatusCode::UNPROCESSABLE_ENTITY, "batch_too_large"),
            Config(_) => (StatusCode::UNPROCESSABLE_ENTITY, "invalid_config"),
            Corpus(_) | NotCreated | Replay { .. } | Al(_) => {
                (StatusCode::INTERNAL_SERVER_ERROR, "internal")
            }
        };
        ApiError::new(status, kind, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

/// `Json` whose rejections use the service's error body.
pub struct Body<T>(pub T);

impl<S, T> FromRequest<S> for Body<T>
where
    Json<T>: FromRequest<S, Rejection = JsonRejection>,
    S: Send + Sync,
{
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, Self::Rejection> {
        match Json::<T>::from_request(req, state).await {
            Ok(Json(v)) => Ok(Body(v)),
            Err(e) => Err(ApiError::new(e.status(), "bad_request", e.body_text())),
        }
    }
}

type ApiResult<T> = Result<T, ApiError>;

// Handlers.

async fn create_session(
    State(app): State<Arc<AppState>>,
    Body(req): Body<CreateRequest>,
) -> ApiResult<(StatusCode, Json<Created>)> {
    let mut config = req.config;
    let corpus = app
        .corpora
        .get(&config.corpus)
        .cloned()
        .ok_or_else(|| ApiError::not_found(format!("no corpus `{}`", config.corpus)))?;
    if let Some(want) = &config.corpus_digest {
        if corpus.digest.as_ref().is_some_and(|d| d != want) {
            return Err(ApiError::invalid(format!(
                "corpus `{}` does not match the requested digest",
                config.corpus
            )));
        }
    }
    config.corpus_digest = corpus.digest.clone();
    let id = loop {
        let id = format!("s{:06}", app.next_id.fetch_add(1, Ordering::Relaxed));
        if !app
            .sessions
            .lock()
            .expect("session map poisoned")
            .contains_key(&id)
        {
            break id;
        }
    };
    let (session, _) = Session::create(&id, req.mode, config, &corpus, app.now())?;
    app.persist(&id, &session.log()[0]).map_err(|e| {
        log::error!("session {id}: {e}");
        ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "storage", e.to_string())
    })?;
    let phase = session.state().phase;
    let mut slot = Slot {
        session,
        corpus,
        precompute: None,
    };
    app.start_selection(&mut slot);
    app.sessions
        .lock()
        .expect("session map poisoned")
        .insert(id.clone(), Arc::new(Mutex::new(slot)));
    log::info!("created session {id}");
    Ok((StatusCode::CREATED, Json(Created { id, phase })))
}

fn pending_view(state: &SessionState, corpus: &SessionCorpus) -> Option<BatchResponse> {
    let pending = state.pending.as_ref()?;
    let by_id: HashMap<SentenceId, &Sentence> =
        corpus.train.iter().map(|(s, _)| (s.id, s)).collect();
    Some(BatchResponse {
        batch_id: pending.batch_id,
        served_ms: pending.served_ms,
        sentences: pending
            .ids
            .iter()
            .map(|id| WireSentence::from(by_id[id]))
            .collect(),
    })
}

async fn get_session(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> ApiResult<Json<SessionView>> {
    let slot = app.slot(&id)?;
    let slot = slot.lock().await;
    let st = slot.session.state();
    let corpus = &slot.corpus;
    let gold = &corpus.train[..st.config.gold_size.min(corpus.train.len())];
    Ok(Json(SessionView {
        schema_version: SCHEMA_VERSION.to_string(),
        id: st.id.clone(),
        mode: st.mode,
        phase: st.phase,
        config: st.config.clone(),
        iteration: st.iteration,
        feedback_done: st.feedback_done,
        annotated_sentences: st.annotated.len(),
        annotated_words: st.words,
        feedback_sentence: st.feedback_sentence(corpus).map(WireSentence::from),
        pending: pending_view(st, corpus),
        final_sentences: (st.phase == Phase::FinalEval).then(|| {
            st.final_sentences(corpus)
                .iter()
                .map(|(s, _)| WireSentence::from(s))
                .collect()
        }),
        final_report: st.final_report,
        rules_text: st.rules_text.clone(),
        rule_submissions: st.rule_submissions,
        rules_result: st.rules_text.as_deref().map(|t| evaluate_rules(t, gold)),
        created_ms: st.created_ms,
        updated_ms: st.updated_ms,
        events: st.events,
        state_hash: state_hash(st),
    }))
}

async fn post_feedback(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    Body(req): Body<FeedbackRequest>,
) -> ApiResult<Json<FeedbackResponse>> {
    let command = match (req.labeling, req.stop) {
        (Some(labeling), false) => Command::Feedback { labeling },
        (None, true) => Command::StopFeedback,
        _ => return Err(ApiError::invalid("send either `labeling` or `stop: true`")),
    };
    let slot = app.slot(&id)?;
    let mut slot = slot.lock().await;
    let ts = app.now();
    let outcome = app.commit(&id, &mut slot, |s, c| Ok(s.execute(c, command, ts)?.0))?;
    app.start_selection(&mut slot);
    Ok(Json(match outcome {
        Outcome::Feedback(f) => FeedbackResponse {
            phase: f.phase,
            gold: Some(f.gold),
            missing: Some(f.missing),
            extra: Some(f.extra),
            next: f.next.as_ref().map(WireSentence::from),
        },
        other => FeedbackResponse {
            phase: phase_of(&other, slot.session.state()),
            gold: None,
            missing: None,
            extra: None,
            next: None,
        },
    }))
}

fn phase_of(outcome: &Outcome, state: &SessionState) -> Phase {
    match outcome {
        Outcome::PhaseChanged { phase } => *phase,
        _ => state.phase,
    }
}

async fn get_batch(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> ApiResult<Json<BatchResponse>> {
    let slot = app.slot(&id)?;
    let mut slot = slot.lock().await;
    if let Some(view) = pending_view(slot.session.state(), &slot.corpus) {
        return Ok(Json(view));
    }
    let state = slot.session.state();
    if state.mode != Mode::Annotation {
        return Err(SessionError::WrongMode(Mode::Annotation).into());
    }
    if state.phase != Phase::Active {
        return Err(SessionError::WrongPhase {
            expected: Phase::Active,
            actual: state.phase,
        }
        .into());
    }
    let events = state.events;
    let fresh = (state.clone(), slot.corpus.clone());
    let handle = match slot.precompute.take() {
        Some(p) if p.events == events => p.handle,
        _ => app.spawn_selection(fresh.0, fresh.1),
    };
    let ids = handle.await.map_err(|e| {
        ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string())
    })??;
    let ts = app.now();
    app.commit(&id, &mut slot, |s, c| s.serve(c, ids, ts))?;
    let view = pending_view(slot.session.state(), &slot.corpus).expect("batch was just served");
    Ok(Json(view))
}

async fn post_annotations(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    Body(req): Body<AnnotationsRequest>,
) -> ApiResult<Json<SubmitAck>> {
    let slot = app.slot(&id)?;
    let mut slot = slot.lock().await;
    let ts = app.now();
    let command = Command::Annotations {
        batch_id: req.batch_id,
        labelings: req.labelings,
    };
    let outcome = app.commit(&id, &mut slot, |s, c| Ok(s.execute(c, command, ts)?.0))?;
    app.start_selection(&mut slot);
    match outcome {
        Outcome::Ack(ack) => Ok(Json(ack)),
        _ => unreachable!("annotations always answer with an ack"),
    }
}

async fn post_rules(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    Body(req): Body<RulesRequest>,
) -> ApiResult<Json<RulesResult>> {
    let slot = app.slot(&id)?;
    let mut slot = slot.lock().await;
    let ts = app.now();
    let command = Command::Rules { text: req.text };
    match app.commit(&id, &mut slot, |s, c| Ok(s.execute(c, command, ts)?.0))? {
        Outcome::Rules(r) => Ok(Json(r)),
        _ => unreachable!("rules always answer with a report"),
    }
}

async fn post_final(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    Body(req): Body<FinalRequest>,
) -> ApiResult<Json<FinalResponse>> {
    let slot = app.slot(&id)?;
    let mut slot = slot.lock().await;
    let ts = app.now();
    let command = match slot.session.state().mode {
        Mode::Annotation => Command::Final {
            labelings: req.labelings,
        },
        Mode::RuleWriting if req.labelings.is_empty() => Command::Finish,
        Mode::RuleWriting => {
            return Err(ApiError::invalid(
                "a rule-writing session takes no labelings",
            ))
        }
    };
    let outcome = app.commit(&id, &mut slot, |s, c| Ok(s.execute(c, command, ts)?.0))?;
    slot.precompute = None;
    Ok(Json(match outcome {
        Outcome::Final { report, phase } => FinalResponse {
            phase,
            report: Some(report),
        },
        other => FinalResponse {
            phase: phase_of(&other, slot.session.state()),
            report: None,
        },
    }))
}

async fn get_reference(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> ApiResult<Json<Vec<ReferenceSentence>>> {
    let slot = app.slot(&id)?;
    let slot = slot.lock().await;
    let gold_size = slot.session.state().config.gold_size;
    let gold = &slot.corpus.train[..gold_size.min(slot.corpus.train.len())];
    Ok(Json(
        gold.iter()
            .map(|(s, l)| ReferenceSentence {
                id: s.id,
                tokens: WireSentence::from(s).tokens,
                tags: l.clone(),
            })
            .collect(),
    ))
}

async fn get_events(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> ApiResult<Response> {
    let slot = app.slot(&id)?;
    let slot = slot.lock().await;
    let body = log_to_jsonl(slot.session.log());
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], body).into_response())
}
