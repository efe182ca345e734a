//! HTTP API over agent sessions.
//!
//! | Method | Path | |
//! |---|---|---|
//! | POST | `/sessions` | create a session |
//! | GET | `/sessions/{id}` | session handle and status |
//! | POST | `/sessions/{id}/messages` | start a query; the answer arrives as events |
//! | GET | `/sessions/{id}/events` | server-sent event stream, resumable by `since` or `Last-Event-ID` |
//! | GET | `/sessions/{id}/trace` | step traces of finished queries |
//! | GET | `/sessions/{id}/memory` | pool listing |
//! | GET, PUT, PATCH, DELETE | `/sessions/{id}/memory/{key}` | read, append, replace top, remove |
//! | POST | `/sessions/{id}/memory/{key}/upload` | one SMILES per line, stored as a drug list |
//!
//! With [`ServiceConfig::static_dir`] set, any other GET is answered from
//! that directory, so a built web console can be served alongside the API.

pub mod error;
pub mod events;

use std::collections::HashMap;
use std::convert::Infallible;
use std::net::SocketAddr;
use std::path::{Component, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use axum::extract::{DefaultBodyLimit, Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode, Uri};
use axum::response::sse::{Event as SseEvent, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::stream::{self, Stream, StreamExt};
use pilot_core::pmp::SlotSummary;
use pilot_core::smiles::validate_smiles;
use pilot_core::{
    Agent, AgentConfig, BackendConfig, ChatBackend, Clock, KeyToken, ParameterValue, Session, SharedPool, StepTrace,
    ToolRegistry,
};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::broadcast::error::RecvError;

pub use error::ApiError;
pub use events::{Event, EventLog};

/// Default cap on upload bodies.
pub const DEFAULT_UPLOAD_LIMIT: usize = 64 * 1024 * 1024;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SessionHandle {
    pub id: String,
    /// Milliseconds since the Unix epoch.
    pub created_at: u64,
    pub backend: String,
    pub pmp: bool,
    pub fefo: bool,
}

struct SessionEntry {
    handle: SessionHandle,
    pool: SharedPool,
    session: Mutex<Session>,
    agent: Agent,
    busy: AtomicBool,
    events: EventLog,
    traces: Mutex<Vec<(String, Vec<StepTrace>)>>,
}

#[derive(Clone)]
pub struct ServiceConfig {
    pub backend: BackendConfig,
    pub agent: AgentConfig,
    pub registry: ToolRegistry,
    pub upload_limit: usize,
    pub clock: Clock,
    pub static_dir: Option<PathBuf>,
}

impl ServiceConfig {
    pub fn new(backend: BackendConfig) -> Self {
        ServiceConfig {
            backend,
            agent: AgentConfig::default(),
            registry: ToolRegistry::standard(),
            upload_limit: DEFAULT_UPLOAD_LIMIT,
            clock: Clock::system(),
            static_dir: None,
        }
    }
}

#[derive(Clone)]
pub struct AppState(Arc<Inner>);

struct Inner {
    config: ServiceConfig,
    sessions: RwLock<HashMap<String, Arc<SessionEntry>>>,
}

impl AppState {
    pub fn new(config: ServiceConfig) -> Self {
        AppState(Arc::new(Inner { config, sessions: RwLock::new(HashMap::new()) }))
    }

    fn session(&self, id: &str) -> Result<Arc<SessionEntry>, ApiError> {
        self.0
            .sessions
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::UnknownSession(id.to_string()))
    }
}

pub fn router(state: AppState) -> Router {
    let upload_limit = state.0.config.upload_limit;
    let static_dir = state.0.config.static_dir.clone();
    let api = Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/messages", post(post_message))
        .route("/sessions/{id}/events", get(events))
        .route("/sessions/{id}/trace", get(trace))
        .route("/sessions/{id}/memory", get(list_memory))
        .route(
            "/sessions/{id}/memory/{key}",
            get(get_memory).put(put_memory).patch(patch_memory).delete(delete_memory),
        )
        .route(
            "/sessions/{id}/memory/{key}/upload",
            post(upload_memory).layer(DefaultBodyLimit::max(upload_limit)),
        )
        .with_state(state);
    match static_dir {
        Some(dir) => api.fallback(get(move |uri: Uri| static_file(dir.clone(), uri))),
        None => api,
    }
}

async fn static_file(root: PathBuf, uri: Uri) -> Response {
    let rel = uri.path().trim_start_matches('/');
    let rel = if rel.is_empty() || rel.ends_with('/') { format!("{rel}index.html") } else { rel.to_string() };
    let path = std::path::Path::new(&rel);
    if !path.components().all(|c| matches!(c, Component::Normal(_))) {
        return StatusCode::NOT_FOUND.into_response();
    }
    let mime = match path.extension().and_then(|e| e.to_str()) {
        Some("html") => "text/html; charset=utf-8",
        Some("js" | "mjs") => "text/javascript",
        Some("css") => "text/css",
        Some("json" | "map") => "application/json",
        Some("svg") => "image/svg+xml",
        Some("png") => "image/png",
        Some("ico") => "image/x-icon",
        Some("woff2") => "font/woff2",
        _ => "application/octet-stream",
    };
    match tokio::fs::read(root.join(path)).await {
        Ok(bytes) => ([(header::CONTENT_TYPE, mime)], bytes).into_response(),
        Err(_) => StatusCode::NOT_FOUND.into_response(),
    }
}

pub async fn serve(addr: SocketAddr, state: AppState) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    serve_on(listener, state).await
}

/// Serves on an already bound listener.
pub async fn serve_on(listener: tokio::net::TcpListener, state: AppState) -> std::io::Result<()> {
    tracing::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state)).await
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    #[serde(default)]
    pub backend: Option<BackendConfig>,
    #[serde(default)]
    pub pmp: Option<bool>,
    #[serde(default)]
    pub fefo: Option<bool>,
}

async fn create_session(State(state): State<AppState>, body: Option<Json<CreateSession>>) -> Result<Response, ApiError> {
    let req = body.map(|Json(b)| b).unwrap_or_default();
    let cfg = &state.0.config;
    let backend_cfg = req.backend.unwrap_or_else(|| cfg.backend.clone());
    let backend: Arc<dyn ChatBackend> =
        backend_cfg.build(&cfg.clock).map_err(|e| ApiError::BadRequest(e.to_string()))?;
    let agent_cfg = AgentConfig {
        pmp: req.pmp.unwrap_or(cfg.agent.pmp),
        fefo: req.fefo.unwrap_or(cfg.agent.fefo),
        ..cfg.agent.clone()
    };
    let session = Session::new();
    let handle = SessionHandle {
        id: session.id.clone(),
        created_at: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64),
        backend: match backend_cfg.kind {
            pilot_core::llm::BackendKind::Http => "http".into(),
            pilot_core::llm::BackendKind::Scripted => "scripted".into(),
        },
        pmp: agent_cfg.pmp,
        fefo: agent_cfg.fefo,
    };
    let entry = SessionEntry {
        handle: handle.clone(),
        pool: session.pool.clone(),
        agent: Agent::with_clock(backend, cfg.registry.clone(), agent_cfg, cfg.clock.clone()),
        session: Mutex::new(session),
        busy: AtomicBool::new(false),
        events: EventLog::default(),
        traces: Mutex::new(Vec::new()),
    };
    state.0.sessions.write().unwrap_or_else(|e| e.into_inner()).insert(handle.id.clone(), Arc::new(entry));
    Ok((StatusCode::CREATED, Json(handle)).into_response())
}

async fn get_session(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<Value>, ApiError> {
    let entry = state.session(&id)?;
    Ok(Json(json!({
        "session": entry.handle,
        "busy": entry.busy.load(Ordering::SeqCst),
        "events": entry.events.len(),
        "revision": entry.pool.read().revision(),
    })))
}

#[derive(Debug, Deserialize)]
pub struct PostMessage {
    pub text: String,
}

async fn post_message(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Json(body): Json<PostMessage>,
) -> Result<Response, ApiError> {
    let entry = state.session(&id)?;
    if body.text.trim().is_empty() {
        return Err(ApiError::BadRequest("message text is empty".into()));
    }
    if entry.busy.compare_exchange(false, true, Ordering::SeqCst, Ordering::SeqCst).is_err() {
        return Err(ApiError::BusySession(id));
    }
    let query_id = uuid::Uuid::new_v4().to_string();
    let qid = query_id.clone();
    tokio::task::spawn_blocking(move || {
        let outcome = {
            let mut session = entry.session.lock().unwrap_or_else(|e| e.into_inner());
            entry
                .agent
                .run_query_observed(&mut session, &body.text, &mut |ev| {
                    entry.events.emit_agent(&qid, ev);
                })
        };
        entry.traces.lock().unwrap_or_else(|e| e.into_inner()).push((qid, outcome.trace));
        entry.busy.store(false, Ordering::SeqCst);
    });
    Ok((StatusCode::ACCEPTED, Json(json!({"query_id": query_id}))).into_response())
}

#[derive(Debug, Default, Deserialize)]
pub struct EventsQuery {
    /// First sequence number to deliver.
    pub since: Option<u64>,
    /// `false` delivers the backlog and ends the stream.
    pub follow: Option<bool>,
}

fn sse_event(e: &Event) -> SseEvent {
    SseEvent::default()
        .id(e.seq.to_string())
        .event(e.kind.clone())
        .data(serde_json::to_string(e).expect("events serialize"))
}

async fn events(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<EventsQuery>,
    headers: HeaderMap,
) -> Result<Sse<impl Stream<Item = Result<SseEvent, Infallible>>>, ApiError> {
    let entry = state.session(&id)?;
    let resume = headers
        .get("last-event-id")
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.trim().parse::<u64>().ok())
        .map(|last| last + 1);
    let from = q.since.or(resume).unwrap_or(0);
    let (backlog, rx) = entry.events.subscribe_from(from);
    let next = from + backlog.len() as u64;
    let follow = q.follow.unwrap_or(true);

    let backlog = stream::iter(backlog.into_iter().map(|e| Ok(sse_event(&e))));
    let live = stream::unfold((rx, next, follow), |(mut rx, next, follow)| async move {
        if !follow {
            return None;
        }
        loop {
            match rx.recv().await {
                Ok(e) if e.seq < next => continue,
                Ok(e) => {
                    let next = e.seq + 1;
                    return Some((Ok(sse_event(&e)), (rx, next, follow)));
                }
                Err(RecvError::Lagged(_)) => {
                    let lagged = SseEvent::default().event("lagged").data(json!({"resume_from": next}).to_string());
                    return Some((Ok(lagged), (rx, next, false)));
                }
                Err(RecvError::Closed) => return None,
            }
        }
    });
    Ok(Sse::new(backlog.chain(live)).keep_alive(KeepAlive::default()))
}

#[derive(Debug, Default, Deserialize)]
pub struct TraceQuery {
    /// `jsonl` returns line-delimited JSON instead of one document.
    pub format: Option<String>,
}

async fn trace(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<TraceQuery>,
) -> Result<Response, ApiError> {
    let entry = state.session(&id)?;
    let traces = entry.traces.lock().unwrap_or_else(|e| e.into_inner()).clone();
    if q.format.as_deref() == Some("jsonl") {
        let mut buf = Vec::new();
        for (qid, steps) in &traces {
            for (i, step) in steps.iter().enumerate() {
                let line = json!({"kind": "step", "query": qid, "index": i, "step": step});
                buf.extend_from_slice(line.to_string().as_bytes());
                buf.push(b'\n');
            }
        }
        return Ok(([("content-type", "application/x-ndjson")], buf).into_response());
    }
    let body: Vec<Value> = traces.iter().map(|(qid, steps)| json!({"query_id": qid, "steps": steps})).collect();
    Ok(Json(body).into_response())
}

fn key_of(raw: &str) -> Result<KeyToken, ApiError> {
    KeyToken::new(raw).map_err(|_| ApiError::MalformedKey(raw.to_string()))
}

fn pool_changed(entry: &SessionEntry, op: &str, key: &KeyToken, revision: u64) {
    let keys: Vec<String> = entry.pool.read().list_keys().into_iter().map(String::from).collect();
    entry.events.emit("pool_changed", None, json!({"revision": revision, "keys": keys, "op": op, "key": key}));
}

async fn list_memory(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<Value>, ApiError> {
    let entry = state.session(&id)?;
    let pool = entry.pool.read();
    let keys: Vec<SlotSummary> = pool.summaries();
    Ok(Json(json!({"revision": pool.revision(), "keys": keys})))
}

#[derive(Debug, Default, Deserialize)]
pub struct GetMemoryQuery {
    /// `true` returns every stacked value, oldest first.
    pub stack: Option<bool>,
}

async fn get_memory(
    State(state): State<AppState>,
    Path((id, key)): Path<(String, String)>,
    Query(q): Query<GetMemoryQuery>,
) -> Result<Json<Value>, ApiError> {
    let entry = state.session(&id)?;
    let key = key_of(&key)?;
    let pool = entry.pool.read();
    let stack = pool.stack(key.as_str())?;
    let mut body = json!({
        "key": key,
        "depth": stack.len(),
        "revision": pool.revision(),
        "value": stack.last().expect("stacks are non-empty"),
    });
    if q.stack.unwrap_or(false) {
        body["stack"] = json!(stack);
    }
    Ok(Json(body))
}

/// Request bodies carry a tagged value (`{"type": ..., "data": ...}`); any
/// other JSON is read by shape.
fn value_of(body: Value) -> ParameterValue {
    serde_json::from_value::<ParameterValue>(body.clone()).unwrap_or_else(|_| ParameterValue::from_json(&body))
}

async fn put_memory(
    State(state): State<AppState>,
    Path((id, key)): Path<(String, String)>,
    Json(body): Json<Value>,
) -> Result<Json<Value>, ApiError> {
    let entry = state.session(&id)?;
    let key = key_of(&key)?;
    let revision = entry.pool.write().put(&key, value_of(body))?;
    pool_changed(&entry, "put", &key, revision);
    Ok(Json(json!({"key": key, "revision": revision})))
}

async fn patch_memory(
    State(state): State<AppState>,
    Path((id, key)): Path<(String, String)>,
    Json(body): Json<Value>,
) -> Result<Json<Value>, ApiError> {
    let entry = state.session(&id)?;
    let key = key_of(&key)?;
    let revision = entry.pool.write().update(key.as_str(), value_of(body))?;
    pool_changed(&entry, "update", &key, revision);
    Ok(Json(json!({"key": key, "revision": revision})))
}

async fn delete_memory(
    State(state): State<AppState>,
    Path((id, key)): Path<(String, String)>,
) -> Result<Json<Value>, ApiError> {
    let entry = state.session(&id)?;
    let key = key_of(&key)?;
    let revision = entry.pool.write().delete(key.as_str())?;
    pool_changed(&entry, "delete", &key, revision);
    Ok(Json(json!({"key": key, "revision": revision})))
}

async fn upload_memory(
    State(state): State<AppState>,
    Path((id, key)): Path<(String, String)>,
    body: String,
) -> Result<Json<Value>, ApiError> {
    let entry = state.session(&id)?;
    let key = key_of(&key)?;
    let mut molecules = Vec::new();
    let mut invalid = Vec::new();
    for (i, line) in body.lines().enumerate() {
        let smiles = line.trim();
        if smiles.is_empty() {
            continue;
        }
        match validate_smiles(smiles) {
            Ok(()) => molecules.push(smiles.to_string()),
            Err(e) => invalid.push(json!({"line": i + 1, "content": smiles, "reason": e.to_string()})),
        }
    }
    if !invalid.is_empty() {
        return Err(ApiError::InvalidUpload(Value::Array(invalid)));
    }
    if molecules.is_empty() {
        return Err(ApiError::InvalidValue("upload contains no SMILES".into()));
    }
    let count = molecules.len();
    let revision = entry.pool.write().put(&key, ParameterValue::DrugList(molecules))?;
    pool_changed(&entry, "upload", &key, revision);
    Ok(Json(json!({"key": key, "count": count, "revision": revision})))
}
