//! HTTP front end for interactive repair.
//!
//! A session holds one machine, its parameters, one trace, the corrections
//! made on that trace, at most one continue fork, repair jobs and their
//! solutions. Payloads use the on-disk formats: traces as JSON lines,
//! corrections as the corrections-file array, solutions and heatmaps exactly
//! as `rsm` writes them (the work is done by the same functions).

use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use rsm_cli::CliError;
use rsm_core::corrections::{self, fork_continue, ContinueSession, Correction, CorrectionError, SessionStatus};
use rsm_core::lang::parse_transition_named;
use rsm_core::repair::{RepairConfig, Solutions};
use rsm_core::trace::{Trace, TraceElement};
use rsm_core::{Label, ParameterMap, TransitionFn};
use rsm_sim::grid::{GridSpec, Heatmap};
use rsm_sim::{corpus, docker, Scenario, Simulator};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use tokio::sync::{Mutex, Semaphore};

/// Default trace window length.
pub const WINDOW: usize = 200;

#[derive(Debug)]
pub enum ApiError {
    NotFound(String),
    Conflict(String),
    Invalid(String),
    Backend(String),
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (code, msg) = match self {
            ApiError::NotFound(m) => (StatusCode::NOT_FOUND, m),
            ApiError::Conflict(m) => (StatusCode::CONFLICT, m),
            ApiError::Invalid(m) => (StatusCode::UNPROCESSABLE_ENTITY, m),
            ApiError::Backend(m) => (StatusCode::BAD_GATEWAY, m),
        };
        json(code, serde_json::json!({ "error": msg }).to_string())
    }
}

impl From<CliError> for ApiError {
    fn from(e: CliError) -> Self {
        match e {
            CliError::Backend(m) => ApiError::Backend(m),
            CliError::Usage(m) | CliError::Domain(m) => ApiError::Invalid(m),
        }
    }
}

impl From<CorrectionError> for ApiError {
    fn from(e: CorrectionError) -> Self {
        match e {
            CorrectionError::Finalized | CorrectionError::Terminated => ApiError::Conflict(e.to_string()),
            e => ApiError::Invalid(e.to_string()),
        }
    }
}

type ApiResult = Result<Response, ApiError>;

fn with_type(code: StatusCode, ty: &'static str, body: String) -> Response {
    (code, [(header::CONTENT_TYPE, HeaderValue::from_static(ty))], body).into_response()
}

fn json(code: StatusCode, body: String) -> Response {
    with_type(code, "application/json", body)
}

fn to_json<T: Serialize>(code: StatusCode, v: &T) -> Response {
    json(code, serde_json::to_string(v).expect("response serializes"))
}

fn parse<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::Invalid(format!("request body: {e}")))
}

/// An empty body means `T::default()`.
fn parse_or_default<T: DeserializeOwned + Default>(body: &Bytes) -> Result<T, ApiError> {
    if body.iter().all(u8::is_ascii_whitespace) {
        Ok(T::default())
    } else {
        parse(body)
    }
}

/// Where to draw a trace element: robot pose and ball, when the recorded
/// channels determine them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    pub t: usize,
    pub state: Label,
    pub robot: Option<[f64; 2]>,
    pub heading: Option<f64>,
    pub ball: Option<[f64; 2]>,
}

pub fn project(e: &TraceElement) -> Projection {
    let v = |k: &str| e.inputs.get(k).and_then(|x| x.as_vec2());
    let absolute = v("robotLoc").zip(e.inputs.get("robotAng").and_then(|x| x.as_real()));
    let pose = absolute.or_else(|| docker::pose_from_errors(&e.inputs).map(|(p, h)| ([p.x, p.y], h)));
    Projection {
        t: e.t,
        state: e.state.clone(),
        robot: pose.map(|p| p.0),
        heading: pose.map(|p| p.1),
        ball: v("ballLoc"),
    }
}

#[derive(Clone, Debug, Serialize)]
#[serde(tag = "status", rename_all = "lowercase")]
enum Job {
    Queued,
    Running,
    Done,
    Failed { error: String },
}

struct Session {
    rsm: TransitionFn,
    params: ParameterMap,
    /// Every parameter map the session has held; `versions[0]` is the loaded one.
    versions: Vec<ParameterMap>,
    trace: Trace,
    corrections: Vec<Correction>,
    fork: Option<ContinueSession>,
    solutions: Option<Solutions>,
    jobs: Vec<Job>,
    heatmap: Option<Heatmap>,
}

#[derive(Serialize)]
struct ForkView<'a> {
    base_t: usize,
    forbidden: &'a Label,
    status: SessionStatus,
    /// Elements visited since the fork point.
    steps: usize,
    negatives: usize,
    frontier: &'a TraceElement,
    world: Projection,
}

fn fork_view(f: &ContinueSession) -> ForkView<'_> {
    ForkView {
        base_t: f.base_t(),
        forbidden: f.forbidden(),
        status: f.status(),
        steps: f.trace().len() - 1 - f.base_t(),
        negatives: f.negatives().len(),
        frontier: f.frontier(),
        world: project(f.frontier()),
    }
}

#[derive(Serialize)]
struct SessionView<'a> {
    id: &'a str,
    rsm: &'a str,
    states: &'a [Label],
    params: &'a ParameterMap,
    version: usize,
    len: usize,
    corrections: usize,
    fork: Option<ForkView<'a>>,
    solutions: usize,
    jobs: usize,
}

impl Session {
    fn view<'a>(&'a self, id: &'a str) -> SessionView<'a> {
        SessionView {
            id,
            rsm: &self.rsm.name,
            states: &self.rsm.states,
            params: &self.params,
            version: self.versions.len() - 1,
            len: self.trace.len(),
            corrections: self.corrections.len(),
            fork: self.fork.as_ref().map(fork_view),
            solutions: self.solutions.as_ref().map_or(0, |s| s.solutions.len()),
            jobs: self.jobs.len(),
        }
    }

    fn fork_mut(&mut self) -> Result<&mut ContinueSession, ApiError> {
        self.fork.as_mut().ok_or_else(|| ApiError::NotFound("no fork in this session".into()))
    }
}

/// Shared service state. Each session sits behind its own lock, so requests
/// on one session are serialized while sessions proceed independently;
/// repairs and heatmaps run on a bounded pool of blocking workers.
#[derive(Clone)]
pub struct App {
    sessions: Arc<RwLock<HashMap<String, Arc<Mutex<Session>>>>>,
    workers: Arc<Semaphore>,
}

impl App {
    pub fn new(workers: usize) -> Self {
        App {
            sessions: Arc::default(),
            workers: Arc::new(Semaphore::new(workers.max(1))),
        }
    }

    fn session(&self, id: &str) -> Result<Arc<Mutex<Session>>, ApiError> {
        self.sessions
            .read()
            .unwrap()
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::NotFound(format!("no session `{id}`")))
    }

    /// Runs `f` on a blocking thread once a worker slot is free.
    async fn offload<T: Send + 'static>(&self, f: impl FnOnce() -> T + Send + 'static) -> T {
        let _permit = self.workers.acquire().await.expect("worker pool is never closed");
        tokio::task::spawn_blocking(f).await.expect("worker panicked")
    }
}

impl Default for App {
    fn default() -> Self {
        App::new(std::thread::available_parallelism().map_or(1, |n| n.get()))
    }
}

pub fn router(app: App) -> Router {
    Router::new()
        .route("/api/v1/sessions", post(create_session).get(list_sessions))
        .route("/api/v1/sessions/{id}", get(get_session).delete(delete_session))
        .route("/api/v1/sessions/{id}/trace", get(trace_window))
        .route("/api/v1/sessions/{id}/trace/export", get(trace_export))
        .route(
            "/api/v1/sessions/{id}/corrections",
            get(list_corrections).post(post_correction).delete(clear_corrections),
        )
        .route("/api/v1/sessions/{id}/fork", post(start_fork).get(get_fork).delete(discard_fork))
        .route("/api/v1/sessions/{id}/fork/step", post(step_fork))
        .route("/api/v1/sessions/{id}/fork/finalize", post(finalize_fork))
        .route("/api/v1/sessions/{id}/repair", post(run_repair))
        .route("/api/v1/sessions/{id}/repair/{job}", get(get_job))
        .route("/api/v1/sessions/{id}/solutions", get(list_solutions))
        .route("/api/v1/sessions/{id}/solutions/{rank}/apply", post(apply_solution))
        .route("/api/v1/sessions/{id}/params", get(get_params))
        .route("/api/v1/sessions/{id}/params/{version}", get(get_params_version))
        .route("/api/v1/sessions/{id}/heatmap", post(run_heatmap).get(get_heatmap))
        .with_state(app)
}

/// Exactly one of `trace` (JSON lines) or `scenario` (simulated on creation).
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateSession {
    /// Corpus name or transition-function source.
    rsm: String,
    /// Name for inline source.
    #[serde(default)]
    name: Option<String>,
    params: ParameterMap,
    #[serde(default)]
    trace: Option<String>,
    #[serde(default)]
    scenario: Option<Scenario>,
}

fn resolve_rsm(spec: &str, name: Option<&str>) -> Result<TransitionFn, ApiError> {
    if let Some(t) = corpus::load(spec) {
        return Ok(t);
    }
    parse_transition_named(name.unwrap_or("rsm"), spec).map_err(|e| ApiError::Invalid(format!("rsm: {e}")))
}

async fn create_session(State(app): State<App>, body: Bytes) -> ApiResult {
    let req: CreateSession = parse(&body)?;
    let rsm = resolve_rsm(&req.rsm, req.name.as_deref())?;
    rsm_cli::check_params(&req.params, &rsm)?;
    let trace = match (req.trace, req.scenario) {
        (Some(text), None) => {
            let tr = Trace::read_from(text.as_bytes()).map_err(|e| ApiError::Invalid(format!("trace: {e}")))?;
            tr.check_against(&rsm).map_err(|e| ApiError::Invalid(e.to_string()))?;
            tr
        }
        (None, Some(s)) => {
            let (t, p) = (rsm.clone(), req.params.clone());
            app.offload(move || rsm_cli::simulate(&t, &p, &s)).await?.trace
        }
        _ => return Err(ApiError::Invalid("give exactly one of `trace` and `scenario`".into())),
    };
    if trace.is_empty() {
        return Err(ApiError::Invalid("trace is empty".into()));
    }
    let id = uuid::Uuid::new_v4().to_string();
    let s = Session {
        rsm,
        params: req.params.clone(),
        versions: vec![req.params],
        trace,
        corrections: Vec::new(),
        fork: None,
        solutions: None,
        jobs: Vec::new(),
        heatmap: None,
    };
    let resp = to_json(StatusCode::CREATED, &s.view(&id));
    app.sessions.write().unwrap().insert(id, Arc::new(Mutex::new(s)));
    Ok(resp)
}

async fn list_sessions(State(app): State<App>) -> ApiResult {
    let mut ids: Vec<String> = app.sessions.read().unwrap().keys().cloned().collect();
    ids.sort();
    Ok(to_json(StatusCode::OK, &ids))
}

async fn get_session(State(app): State<App>, Path(id): Path<String>) -> ApiResult {
    let s = app.session(&id)?;
    let s = s.lock().await;
    Ok(to_json(StatusCode::OK, &s.view(&id)))
}

async fn delete_session(State(app): State<App>, Path(id): Path<String>) -> ApiResult {
    match app.sessions.write().unwrap().remove(&id) {
        Some(_) => Ok(StatusCode::NO_CONTENT.into_response()),
        None => Err(ApiError::NotFound(format!("no session `{id}`"))),
    }
}

#[derive(Deserialize)]
struct WindowQuery {
    t0: Option<usize>,
    t1: Option<usize>,
}

#[derive(Serialize)]
struct TraceWindow<'a> {
    t0: usize,
    t1: usize,
    len: usize,
    elements: &'a [TraceElement],
    world: Vec<Projection>,
}

async fn trace_window(State(app): State<App>, Path(id): Path<String>, Query(q): Query<WindowQuery>) -> ApiResult {
    let s = app.session(&id)?;
    let s = s.lock().await;
    let len = s.trace.len();
    let t0 = q.t0.unwrap_or(0);
    let t1 = q.t1.unwrap_or(t0.saturating_add(WINDOW)).min(len);
    if t0 > t1 {
        return Err(ApiError::Invalid(format!("empty window {t0}..{t1} of a trace of length {len}")));
    }
    let elements = s.trace.slice(t0, t1);
    Ok(to_json(
        StatusCode::OK,
        &TraceWindow { t0, t1, len, elements, world: elements.iter().map(project).collect() },
    ))
}

async fn trace_export(State(app): State<App>, Path(id): Path<String>) -> ApiResult {
    let s = app.session(&id)?;
    let s = s.lock().await;
    Ok(with_type(StatusCode::OK, "application/x-ndjson", s.trace.to_jsonl()))
}

async fn list_corrections(State(app): State<App>, Path(id): Path<String>) -> ApiResult {
    let s = app.session(&id)?;
    let s = s.lock().await;
    Ok(json(StatusCode::OK, corrections::to_json(&s.corrections)))
}

async fn post_correction(State(app): State<App>, Path(id): Path<String>, body: Bytes) -> ApiResult {
    let s = app.session(&id)?;
    let c: Correction = parse(&body)?;
    let mut s = s.lock().await;
    corrections::validate(&s.rsm, &s.trace, std::slice::from_ref(&c))?;
    let resp = to_json(StatusCode::CREATED, &c);
    s.corrections.push(c);
    Ok(resp)
}

async fn clear_corrections(State(app): State<App>, Path(id): Path<String>) -> ApiResult {
    let s = app.session(&id)?;
    s.lock().await.corrections.clear();
    Ok(StatusCode::NO_CONTENT.into_response())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct StartFork {
    t: usize,
    forbidden: String,
    #[serde(default)]
    designated: Option<Vec<String>>,
}

async fn start_fork(State(app): State<App>, Path(id): Path<String>, body: Bytes) -> ApiResult {
    let s = app.session(&id)?;
    let req: StartFork = parse(&body)?;
    let mut s = s.lock().await;
    if s.fork.as_ref().is_some_and(|f| f.status() == SessionStatus::Open) {
        return Err(ApiError::Conflict("a fork is already open in this session".into()));
    }
    let sim = Simulator::new(rsm_cli::infer_task(&s.rsm)?);
    let f = fork_continue(&sim, &s.rsm, &s.params, &s.trace, req.t, &req.forbidden, req.designated.as_deref())?;
    let resp = to_json(StatusCode::CREATED, &fork_view(&f));
    s.fork = Some(f);
    Ok(resp)
}

async fn get_fork(State(app): State<App>, Path(id): Path<String>) -> ApiResult {
    let s = app.session(&id)?;
    let mut s = s.lock().await;
    Ok(to_json(StatusCode::OK, &fork_view(s.fork_mut()?)))
}

async fn discard_fork(State(app): State<App>, Path(id): Path<String>) -> ApiResult {
    let s = app.session(&id)?;
    let mut s = s.lock().await;
    s.fork_mut()?;
    s.fork = None;
    Ok(StatusCode::NO_CONTENT.into_response())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct StepFork {
    n: usize,
}

impl Default for StepFork {
    fn default() -> Self {
        StepFork { n: 1 }
    }
}

#[derive(Serialize)]
struct Stepped<'a> {
    #[serde(flatten)]
    fork: ForkView<'a>,
    /// Set when the episode ended during these steps; the fork is closed.
    terminated: bool,
    elements: &'a [TraceElement],
    world: Vec<Projection>,
}

async fn step_fork(State(app): State<App>, Path(id): Path<String>, body: Bytes) -> ApiResult {
    let s = app.session(&id)?;
    let req: StepFork = parse_or_default(&body)?;
    let mut s = s.lock().await;
    let f = s.fork_mut()?;
    if f.status() != SessionStatus::Open {
        return Err(ApiError::Conflict(format!("fork is {}", serde_json::to_string(&f.status()).unwrap())));
    }
    let from = f.trace().len();
    let mut terminated = false;
    for _ in 0..req.n {
        match f.step() {
            Ok(_) => {}
            Err(CorrectionError::Terminated) => {
                terminated = true;
                break;
            }
            Err(e) => return Err(e.into()),
        }
    }
    let elements = &f.trace().elements()[from..];
    Ok(to_json(
        StatusCode::OK,
        &Stepped { fork: fork_view(f), terminated, elements, world: elements.iter().map(project).collect() },
    ))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FinalizeFork {
    stop_t: usize,
}

/// Responds with the generated corrections in corrections-file format. They
/// index the fork's trace, which becomes the session trace when no
/// corrections are pending; otherwise it is appended as a further segment
/// and the new corrections are shifted to match.
async fn finalize_fork(State(app): State<App>, Path(id): Path<String>, body: Bytes) -> ApiResult {
    let s = app.session(&id)?;
    let req: FinalizeFork = parse(&body)?;
    let mut s = s.lock().await;
    let f = s.fork_mut()?;
    if f.status() != SessionStatus::Open {
        return Err(ApiError::Conflict("fork is not open".into()));
    }
    let cs = f.finalize(req.stop_t)?;
    let fork_trace = f.trace().clone();
    let body = corrections::to_json(&cs);
    if s.corrections.is_empty() {
        s.trace = fork_trace;
        s.corrections = cs;
    } else {
        let (trace, all) = corrections::bundle(&[(&s.trace, &s.corrections), (&fork_trace, &cs)]);
        s.trace = trace;
        s.corrections = all;
    }
    Ok(json(StatusCode::OK, body))
}

#[derive(Serialize)]
struct JobView<'a> {
    id: usize,
    #[serde(flatten)]
    job: &'a Job,
}

async fn run_repair(State(app): State<App>, Path(id): Path<String>, body: Bytes) -> ApiResult {
    let handle = app.session(&id)?;
    let cfg: RepairConfig = parse_or_default(&body)?;
    cfg.validate().map_err(|e| ApiError::Invalid(e.to_string()))?;
    let (job, inputs) = {
        let mut s = handle.lock().await;
        s.jobs.push(Job::Queued);
        (s.jobs.len() - 1, (s.rsm.clone(), s.params.clone(), s.trace.clone(), s.corrections.clone()))
    };
    let worker = app.clone();
    let session = handle.clone();
    tokio::spawn(async move {
        let (t, p, trace, cs) = inputs;
        let _permit = worker.workers.acquire().await.expect("worker pool is never closed");
        session.lock().await.jobs[job] = Job::Running;
        let r = tokio::task::spawn_blocking(move || rsm_cli::repair(&t, &p, &trace, &cs, &cfg)).await;
        let mut s = session.lock().await;
        s.jobs[job] = match r {
            Ok(Ok(sols)) => {
                s.solutions = Some(sols);
                Job::Done
            }
            Ok(Err(e)) => Job::Failed { error: e.to_string() },
            Err(e) => Job::Failed { error: format!("repair panicked: {e}") },
        };
    });
    let mut resp = to_json(StatusCode::ACCEPTED, &JobView { id: job, job: &Job::Queued });
    let loc = format!("/api/v1/sessions/{id}/repair/{job}");
    resp.headers_mut().insert(header::LOCATION, HeaderValue::from_str(&loc).expect("ascii path"));
    Ok(resp)
}

async fn get_job(State(app): State<App>, Path((id, job)): Path<(String, usize)>) -> ApiResult {
    let s = app.session(&id)?;
    let s = s.lock().await;
    let j = s.jobs.get(job).ok_or_else(|| ApiError::NotFound(format!("no repair job {job}")))?;
    Ok(to_json(StatusCode::OK, &JobView { id: job, job: j }))
}

async fn list_solutions(State(app): State<App>, Path(id): Path<String>) -> ApiResult {
    let s = app.session(&id)?;
    let s = s.lock().await;
    let sols = s.solutions.as_ref().ok_or_else(|| ApiError::NotFound("no solutions yet".into()))?;
    Ok(json(StatusCode::OK, sols.to_json()))
}

/// Makes a solution's parameters the session's current ones, as a new version.
async fn apply_solution(State(app): State<App>, Path((id, rank)): Path<(String, usize)>) -> ApiResult {
    let s = app.session(&id)?;
    let mut s = s.lock().await;
    let p = s
        .solutions
        .as_ref()
        .and_then(|sols| sols.solutions.iter().find(|x| x.rank == rank))
        .map(|x| x.params.clone())
        .ok_or_else(|| ApiError::NotFound(format!("no solution of rank {rank}")))?;
    s.versions.push(p.clone());
    s.params = p;
    let v = s.versions.len() - 1;
    let mut resp = to_json(StatusCode::CREATED, &s.params);
    let loc = format!("/api/v1/sessions/{id}/params/{v}");
    resp.headers_mut().insert(header::LOCATION, HeaderValue::from_str(&loc).expect("ascii path"));
    Ok(resp)
}

async fn get_params(State(app): State<App>, Path(id): Path<String>) -> ApiResult {
    let s = app.session(&id)?;
    let s = s.lock().await;
    Ok(to_json(StatusCode::OK, &s.params))
}

async fn get_params_version(State(app): State<App>, Path((id, v)): Path<(String, usize)>) -> ApiResult {
    let s = app.session(&id)?;
    let s = s.lock().await;
    let p = s.versions.get(v).ok_or_else(|| ApiError::NotFound(format!("no parameter version {v}")))?;
    Ok(to_json(StatusCode::OK, p))
}

#[derive(Deserialize)]
#[serde(untagged)]
enum GridArg {
    Named(String),
    Spec(GridSpec),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RunHeatmap {
    grid: GridArg,
    #[serde(default)]
    seed: Option<u64>,
}

/// Evaluates the session's current parameters over a grid; responds with
/// the heatmap CSV.
async fn run_heatmap(State(app): State<App>, Path(id): Path<String>, body: Bytes) -> ApiResult {
    let handle = app.session(&id)?;
    let req: RunHeatmap = parse(&body)?;
    let mut g = match req.grid {
        GridArg::Named(n) if n == "attacker" || n == "docker" => rsm_cli::load_grid(&n)?,
        GridArg::Named(n) => return Err(ApiError::Invalid(format!("unknown grid `{n}`"))),
        GridArg::Spec(g) => g,
    };
    if let Some(s) = req.seed {
        g.seed = s;
    }
    let (t, p) = {
        let s = handle.lock().await;
        (s.rsm.clone(), s.params.clone())
    };
    let h = app.offload(move || rsm_cli::evaluate(&t, &p, &g)).await?;
    let csv = h.to_csv();
    handle.lock().await.heatmap = Some(h);
    Ok(with_type(StatusCode::OK, "text/csv", csv))
}

async fn get_heatmap(State(app): State<App>, Path(id): Path<String>) -> ApiResult {
    let s = app.session(&id)?;
    let s = s.lock().await;
    let h = s.heatmap.as_ref().ok_or_else(|| ApiError::NotFound("no heatmap yet".into()))?;
    Ok(with_type(StatusCode::OK, "text/csv", h.to_csv()))
}
