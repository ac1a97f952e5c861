//! HTTP/JSON API. Each session owns its own agent bus; all of them append to one log.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use prereq_core::mas::BusConfig;
use prereq_core::rule_calc::{emit_dataset_csv, CalcError, DEFAULT_K_MAX};
use prereq_core::student_model::parse_timestamp;
use prereq_core::{
    analyze, estimate_rules, Calculus, ClassifyPolicy, Clock, Engine, EvalFeedback, EventLog,
    Phase, QuizPrompt, Recommendation, ScriptedClock, Session, SessionError, StudentId,
    SystemClock,
};

use crate::{parse_range, read_file, CliError};

/// Test-only header carrying comma-separated RFC 3339 instants for the session clock.
pub const SCRIPTED_CLOCK_HEADER: &str = "x-scripted-clock";

const MAX_SWEEP_CELLS: usize = 10_000;

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub port: u16,
    pub ontology_path: PathBuf,
    pub bank_path: PathBuf,
    pub log_path: PathBuf,
    pub policy: ClassifyPolicy,
    pub k_max: u32,
    pub max_messages: usize,
    pub idle_timeout: Duration,
    /// Honour [`SCRIPTED_CLOCK_HEADER`]. Off unless replaying recorded sessions.
    pub allow_scripted_clock: bool,
}

impl ServerConfig {
    pub fn new(ontology_path: PathBuf, bank_path: PathBuf, log_path: PathBuf) -> Self {
        Self {
            port: 8080,
            ontology_path,
            bank_path,
            log_path,
            policy: ClassifyPolicy::default(),
            k_max: DEFAULT_K_MAX,
            max_messages: prereq_core::mas::DEFAULT_MAX_MESSAGES,
            idle_timeout: Duration::from_secs(30 * 60),
            allow_scripted_clock: false,
        }
    }
}

struct ApiSession {
    session: Session,
    prompt: Option<QuizPrompt>,
    feedback: Option<EvalFeedback>,
    last_used: Instant,
}

type SessionSlot = Arc<Mutex<ApiSession>>;

pub struct AppState {
    engine: Arc<Engine>,
    log: Arc<EventLog>,
    calc: Calculus,
    bus: BusConfig,
    idle_timeout: Duration,
    allow_scripted_clock: bool,
    sessions: Mutex<HashMap<String, SessionSlot>>,
}

impl AppState {
    /// Loads every input up front so a bad file stops startup.
    pub fn load(config: &ServerConfig) -> Result<Self, CliError> {
        let engine = Engine::from_texts(
            &read_file(&config.ontology_path)?,
            &read_file(&config.bank_path)?,
            config.policy,
        )?;
        Ok(Self {
            engine: Arc::new(engine),
            log: Arc::new(EventLog::new(&config.log_path)),
            calc: Calculus {
                k_max: config.k_max,
                ..Calculus::default()
            },
            bus: BusConfig {
                max_messages: config.max_messages,
            },
            idle_timeout: config.idle_timeout,
            allow_scripted_clock: config.allow_scripted_clock,
            sessions: Mutex::new(HashMap::new()),
        })
    }

    fn purge_idle(&self, sessions: &mut HashMap<String, SessionSlot>) {
        let timeout = self.idle_timeout;
        sessions.retain(|_, s| match s.try_lock() {
            Ok(s) => s.last_used.elapsed() < timeout,
            // busy sessions are in use, so not idle
            Err(_) => true,
        });
    }

    fn lookup(&self, id: &str) -> Result<SessionSlot, ApiError> {
        let mut sessions = self.sessions.lock().expect("session table poisoned");
        self.purge_idle(&mut sessions);
        sessions
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "SessionNotFound", format!("no session `{id}`")))
    }

    fn insert(&self, slot: SessionSlot) -> String {
        let id = uuid::Uuid::new_v4().simple().to_string();
        let mut sessions = self.sessions.lock().expect("session table poisoned");
        self.purge_idle(&mut sessions);
        sessions.insert(id.clone(), slot);
        id
    }
}

#[derive(Debug, Serialize)]
struct ErrorBody {
    code: &'static str,
    message: String,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "BadRequest", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorBody {
            code: self.code,
            message: self.message,
        };
        (self.status, Json(body)).into_response()
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        let unprocessable = StatusCode::UNPROCESSABLE_ENTITY;
        let (status, code) = match &e {
            SessionError::UnknownDesiredConcept(_) => (unprocessable, "UnknownDesiredConcept"),
            SessionError::WrongPhase { .. } => (StatusCode::CONFLICT, "WrongPhase"),
            SessionError::EmptyAnswer => (unprocessable, "EmptyAnswer"),
            SessionError::IncompleteOutcome { .. } => (StatusCode::CONFLICT, "IncompleteOutcome"),
            _ => (StatusCode::INTERNAL_SERVER_ERROR, "Internal"),
        };
        Self::new(status, code, e.to_string())
    }
}

impl From<CalcError> for ApiError {
    fn from(e: CalcError) -> Self {
        let code = match &e {
            CalcError::InvalidN(..) => "InvalidN",
            CalcError::InvalidC(_) => "InvalidC",
            CalcError::InconsistentInput { .. } => "InconsistentInput",
            CalcError::Overflow { .. } => "Overflow",
            CalcError::OutOfRange(..) => "OutOfRange",
            CalcError::EmptyGrid => "EmptyGrid",
            CalcError::Csv { .. } => "Csv",
        };
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, code, e.to_string())
    }
}

fn internal(e: impl std::fmt::Display) -> ApiError {
    ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "Internal", e.to_string())
}

fn json_body<T: for<'de> Deserialize<'de>>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("invalid JSON body: {e}")))
}

/// Everything a client needs to redraw a session; re-fetching it is side-effect free.
#[derive(Debug, Serialize)]
struct SessionView {
    id: String,
    student: String,
    desired: String,
    phase: Phase,
    question: Option<QuizPrompt>,
    feedback: Option<EvalFeedback>,
    recommendation: Option<Recommendation>,
}

fn view(id: &str, s: &ApiSession) -> SessionView {
    let st = s.session.state();
    SessionView {
        id: id.to_string(),
        student: st.student.to_string(),
        desired: st.desired.to_string(),
        phase: st.phase,
        question: s.prompt.clone(),
        feedback: s.feedback.clone(),
        recommendation: st.recommendation.clone(),
    }
}

/// Asks the next question, or classifies once the quiz is exhausted.
fn advance(s: &mut ApiSession) -> Result<(), SessionError> {
    s.prompt = s.session.next_question()?;
    if s.prompt.is_none() {
        s.session.finalize()?;
    }
    Ok(())
}

fn scripted_clock(headers: &HeaderMap) -> Result<Option<ScriptedClock>, ApiError> {
    let Some(raw) = headers.get(SCRIPTED_CLOCK_HEADER) else {
        return Ok(None);
    };
    let raw = raw
        .to_str()
        .map_err(|_| ApiError::bad_request("scripted clock header is not ASCII"))?;
    let instants = raw
        .split(',')
        .map(|t| parse_timestamp(t.trim()).ok_or_else(|| ApiError::bad_request(format!("bad instant `{t}`"))))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Some(ScriptedClock::new(instants)))
}

#[derive(Debug, Deserialize)]
struct StartRequest {
    student: String,
    desired: String,
}

async fn start_session(
    State(app): State<Arc<AppState>>,
    headers: HeaderMap,
    body: Bytes,
) -> Result<(StatusCode, Json<SessionView>), ApiError> {
    let req: StartRequest = json_body(&body)?;
    let student = StudentId::new(&req.student)
        .map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "InvalidStudentId", e.to_string()))?;
    let clock: Box<dyn Clock> = match scripted_clock(&headers)? {
        Some(c) if app.allow_scripted_clock => Box::new(c),
        Some(_) => return Err(ApiError::bad_request("scripted clock is disabled on this server")),
        None => Box::new(SystemClock),
    };

    let worker = app.clone();
    let slot = tokio::task::spawn_blocking(move || -> Result<ApiSession, SessionError> {
        let session = Session::start(
            worker.engine.clone(),
            worker.log.clone(),
            student,
            &req.desired,
            clock,
            worker.bus,
        )?;
        let mut s = ApiSession {
            session,
            prompt: None,
            feedback: None,
            last_used: Instant::now(),
        };
        advance(&mut s)?;
        Ok(s)
    })
    .await
    .map_err(internal)??;

    let v = view("", &slot);
    let id = app.insert(Arc::new(Mutex::new(slot)));
    Ok((StatusCode::CREATED, Json(SessionView { id, ..v })))
}

async fn current_question(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> Result<Json<SessionView>, ApiError> {
    let slot = app.lookup(&id)?;
    let mut s = slot.lock().map_err(internal)?;
    s.last_used = Instant::now();
    Ok(Json(view(&id, &s)))
}

#[derive(Debug, Deserialize)]
struct AnswerRequest {
    text: String,
}

async fn submit_answer(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Json<SessionView>, ApiError> {
    let req: AnswerRequest = json_body(&body)?;
    let slot = app.lookup(&id)?;
    tokio::task::spawn_blocking(move || -> Result<SessionView, ApiError> {
        let mut s = slot.lock().map_err(internal)?;
        s.last_used = Instant::now();
        let feedback = s.session.submit_answer(&req.text)?;
        s.feedback = Some(feedback);
        advance(&mut s)?;
        Ok(view(&id, &s))
    })
    .await
    .map_err(internal)?
    .map(Json)
}

async fn session_result(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> Result<Json<Recommendation>, ApiError> {
    let slot = app.lookup(&id)?;
    let mut s = slot.lock().map_err(internal)?;
    s.last_used = Instant::now();
    s.session
        .state()
        .recommendation
        .clone()
        .map(Json)
        .ok_or_else(|| ApiError::new(StatusCode::CONFLICT, "NotFinished", "the quiz is still running"))
}

async fn student_history(
    State(app): State<Arc<AppState>>,
    Path(student): Path<String>,
) -> Result<Response, ApiError> {
    let student = StudentId::new(&student)
        .map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "InvalidStudentId", e.to_string()))?;
    let log = app.log.clone();
    let events = tokio::task::spawn_blocking(move || log.load_history(&student))
        .await
        .map_err(internal)?
        .map_err(internal)?;
    Ok(Json(analyze(&events)).into_response())
}

fn int_param(q: &HashMap<String, String>, key: &str) -> Result<i64, ApiError> {
    let raw = q
        .get(key)
        .ok_or_else(|| ApiError::bad_request(format!("missing query parameter `{key}`")))?;
    raw.parse()
        .map_err(|_| ApiError::bad_request(format!("`{key}` must be an integer, got `{raw}`")))
}

#[derive(Debug, Serialize)]
struct EstimateBody {
    r: u128,
}

async fn rules_estimate(Query(q): Query<HashMap<String, String>>) -> Result<Json<EstimateBody>, ApiError> {
    let r = estimate_rules(int_param(&q, "c")?, int_param(&q, "n")?)?;
    Ok(Json(EstimateBody { r: r.get() }))
}

async fn rules_sweep(
    State(app): State<Arc<AppState>>,
    Query(q): Query<HashMap<String, String>>,
) -> Result<Response, ApiError> {
    let range = |key: &str| {
        let raw = q
            .get(key)
            .ok_or_else(|| ApiError::bad_request(format!("missing query parameter `{key}`")))?;
        parse_range(raw).map_err(ApiError::bad_request)
    };
    let (c, n) = (range("c")?, range("n")?);
    let cells = (c.end() - c.start() + 1).saturating_mul(n.end() - n.start() + 1);
    if cells > MAX_SWEEP_CELLS as i64 {
        return Err(ApiError::new(
            StatusCode::UNPROCESSABLE_ENTITY,
            "GridTooLarge",
            format!("{cells} cells requested, limit {MAX_SWEEP_CELLS}"),
        ));
    }
    let grid = app.calc.sweep(c, n)?;
    let csv = emit_dataset_csv(&grid)?;
    Ok(([(header::CONTENT_TYPE, "text/csv; charset=utf-8")], csv).into_response())
}

async fn rules_dump(
    State(app): State<Arc<AppState>>,
    Query(q): Query<HashMap<String, String>>,
) -> Result<Response, ApiError> {
    match q.get("format").map(String::as_str).unwrap_or("json") {
        "json" => Ok((
            [(header::CONTENT_TYPE, "application/json")],
            app.engine.rules.to_json(),
        )
            .into_response()),
        "text" => Ok((
            [(header::CONTENT_TYPE, "text/plain; charset=utf-8")],
            app.engine.rules.to_text(),
        )
            .into_response()),
        other => Err(ApiError::bad_request(format!("unknown format `{other}`"))),
    }
}

async fn ontology(State(app): State<Arc<AppState>>) -> Response {
    Json(&app.engine.graph).into_response()
}

async fn healthz() -> Json<serde_json::Value> {
    Json(serde_json::json!({ "status": "ok" }))
}

async fn not_found() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "NotFound", "no such endpoint")
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/sessions", post(start_session))
        .route("/sessions/{id}/question", get(current_question))
        .route("/sessions/{id}/answer", post(submit_answer))
        .route("/sessions/{id}/result", get(session_result))
        .route("/students/{student}/history", get(student_history))
        .route("/rules/estimate", get(rules_estimate))
        .route("/rules/sweep", get(rules_sweep))
        .route("/rules", get(rules_dump))
        .route("/ontology", get(ontology))
        .route("/healthz", get(healthz))
        .fallback(not_found)
        .with_state(state)
}

/// Binds `0.0.0.0:port` and serves until the process is stopped.
pub async fn serve(config: ServerConfig) -> Result<(), CliError> {
    let state = Arc::new(AppState::load(&config)?);
    let addr = SocketAddr::from(([0, 0, 0, 0], config.port));
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|source| CliError::Bind {
            port: config.port,
            source,
        })?;
    eprintln!("listening on {}", listener.local_addr().map_err(CliError::Serve)?);
    serve_on(listener, state).await
}

pub async fn serve_on(listener: tokio::net::TcpListener, state: Arc<AppState>) -> Result<(), CliError> {
    axum::serve(listener, router(state)).await.map_err(CliError::Serve)
}
