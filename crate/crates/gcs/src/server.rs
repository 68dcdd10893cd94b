//! HTTP + WebSocket front end.
//!
//! ```text
//! GET    /health
//! POST   /session                  create (and by default start) a replay
//! GET    /session                  list sessions
//! GET    /session/{id}             current state
//! POST   /session/{id}/stop        stop; DELETE does the same and forgets it
//! GET    /session/{id}/telemetry   WebSocket, server → client
//! GET    /session/{id}/command     WebSocket, client → server
//! ```

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures_util::{SinkExt, StreamExt};
use serde::Deserialize;
use serde_json::{json, Value};
use tokio::net::TcpListener;
use tokio::sync::{broadcast, mpsc};

use vigil_core::pipeline::{BackendCapabilities, SamplingPolicy, SimulatedDelays};
use vigil_core::replay::{generate_synthetic_trace, DroneState, Speed, SyntheticParams};
use vigil_core::trace_io::{parse_trace, parse_trace_str, MissionTrace};
use vigil_core::vigilance::VigilanceConfig;

use crate::protocol::{
    parse_speed, AckPayload, CommandEnvelope, GapPayload, OperatorCommand, RejectPayload, SessionStatus,
    TelemetryKind, TelemetryMessage,
};
use crate::session::{Session, SessionSpec, BROADCAST_CAPACITY};

pub const DEFAULT_BIND: &str = "127.0.0.1:8787";
pub const BIND_ENV: &str = "VIGIL_BIND";

pub fn bind_from_env() -> String {
    std::env::var(BIND_ENV).unwrap_or_else(|_| DEFAULT_BIND.to_string())
}

pub struct AppState {
    sessions: Mutex<BTreeMap<String, Arc<Session>>>,
    next_id: AtomicU64,
    broadcast_capacity: usize,
}

impl AppState {
    pub fn new() -> Arc<Self> {
        Self::with_broadcast_capacity(BROADCAST_CAPACITY)
    }

    pub fn with_broadcast_capacity(capacity: usize) -> Arc<Self> {
        Arc::new(Self {
            sessions: Mutex::default(),
            next_id: AtomicU64::new(0),
            broadcast_capacity: capacity,
        })
    }

    /// Registers a session; must be called inside a tokio runtime if
    /// `autostart` is set.
    pub fn add(&self, spec: SessionSpec, autostart: bool) -> Result<Arc<Session>, String> {
        let id = format!("s{}", self.next_id.fetch_add(1, Ordering::SeqCst) + 1);
        let session = Session::with_capacity(id.clone(), spec, self.broadcast_capacity);
        if autostart {
            session.start().map_err(|e| e.to_string())?;
        }
        self.sessions.lock().unwrap().insert(id, Arc::clone(&session));
        Ok(session)
    }

    pub fn get(&self, id: &str) -> Option<Arc<Session>> {
        self.sessions.lock().unwrap().get(id).cloned()
    }

    fn remove(&self, id: &str) -> Option<Arc<Session>> {
        self.sessions.lock().unwrap().remove(id)
    }

    fn list(&self) -> Vec<Arc<Session>> {
        self.sessions.lock().unwrap().values().cloned().collect()
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/health", get(|| async { Json(json!({"ok": true})) }))
        .route("/session", post(create_session).get(list_sessions))
        .route("/session/{id}", get(get_session).delete(delete_session))
        .route("/session/{id}/stop", post(stop_session))
        .route("/session/{id}/telemetry", get(telemetry_ws))
        .route("/session/{id}/command", get(command_ws))
        .with_state(state)
}

/// Serves until ctrl-c.
pub async fn serve(listener: TcpListener, state: Arc<AppState>) -> std::io::Result<()> {
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

pub async fn bind(addr: &str) -> std::io::Result<(TcpListener, SocketAddr)> {
    let l = TcpListener::bind(addr).await?;
    let a = l.local_addr()?;
    Ok((l, a))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    /// Path of a JSONL trace on the server.
    pub trace_path: Option<String>,
    /// A JSONL trace inline.
    pub trace: Option<String>,
    /// Generate a synthetic trace instead.
    pub synthetic: Option<SyntheticParams>,
    pub speed: Option<Value>,
    pub theta_s: Option<f64>,
    #[serde(default = "yes")]
    pub autostart: bool,
    /// `none` (default), `gpu` or `cpu`: simulated inference latency.
    pub latency: Option<String>,
    pub policy: Option<SamplingPolicy>,
}

fn yes() -> bool {
    true
}

fn bad_request(msg: impl Into<String>) -> Response {
    (StatusCode::BAD_REQUEST, Json(json!({"error": msg.into()}))).into_response()
}

fn not_found() -> Response {
    (StatusCode::NOT_FOUND, Json(json!({"error": "no such session"}))).into_response()
}

pub fn build_spec(req: CreateSession) -> Result<SessionSpec, String> {
    let trace: MissionTrace = match (req.trace_path, req.trace, req.synthetic) {
        (Some(p), None, None) => parse_trace(&p).map_err(|e| format!("{p}: {e}"))?,
        (None, Some(t), None) => parse_trace_str(&t).map_err(|e| e.to_string())?,
        (None, None, Some(params)) => generate_synthetic_trace(&params).map_err(|e| e.to_string())?,
        _ => return Err("give exactly one of trace_path, trace, synthetic".into()),
    };
    let mut config = VigilanceConfig::default();
    if let Some(t) = req.theta_s {
        config = VigilanceConfig::with_theta(t).map_err(|e| e.to_string())?;
    }
    let speed = match &req.speed {
        Some(v) => parse_speed(v)?,
        None => Speed::RealTime(1.0),
    };
    let delays = match req.latency.as_deref() {
        None | Some("none") => SimulatedDelays::NONE,
        Some("gpu") => SimulatedDelays::from_capabilities(&BackendCapabilities::GPU_REFERENCE),
        Some("cpu") => SimulatedDelays::from_capabilities(&BackendCapabilities::CPU_REFERENCE),
        Some(other) => return Err(format!("unknown latency profile `{other}`")),
    };
    let policy = req
        .policy
        .unwrap_or(SamplingPolicy::EveryFrame)
        .validate()
        .map_err(|e| e.to_string())?;
    Ok(SessionSpec { trace, config, speed, policy, delays })
}

async fn create_session(State(app): State<Arc<AppState>>, body: Result<Json<CreateSession>, axum::extract::rejection::JsonRejection>) -> Response {
    let Json(req) = match body {
        Ok(b) => b,
        Err(e) => return bad_request(e.body_text()),
    };
    let autostart = req.autostart;
    // Parsing a large trace from disk is blocking work.
    let spec = match tokio::task::spawn_blocking(move || build_spec(req)).await {
        Ok(Ok(s)) => s,
        Ok(Err(e)) => return bad_request(e),
        Err(e) => return bad_request(e.to_string()),
    };
    match app.add(spec, autostart) {
        Ok(s) => (StatusCode::CREATED, Json(json!({"id": s.id(), "state": s.state()}))).into_response(),
        Err(e) => bad_request(e),
    }
}

async fn list_sessions(State(app): State<Arc<AppState>>) -> Response {
    let all: Vec<_> = app.list().iter().map(|s| s.state()).collect();
    Json(all).into_response()
}

async fn get_session(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> Response {
    match app.get(&id) {
        Some(s) => Json(s.state()).into_response(),
        None => not_found(),
    }
}

async fn stop_session(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> Response {
    let Some(s) = app.get(&id) else { return not_found() };
    match s.stop() {
        Ok(()) => Json(s.state()).into_response(),
        Err(e) => (StatusCode::CONFLICT, Json(json!({"error": e.to_string()}))).into_response(),
    }
}

async fn delete_session(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> Response {
    let Some(s) = app.remove(&id) else { return not_found() };
    let _ = s.stop();
    StatusCode::NO_CONTENT.into_response()
}

async fn telemetry_ws(State(app): State<Arc<AppState>>, Path(id): Path<String>, ws: WebSocketUpgrade) -> Response {
    match app.get(&id) {
        Some(s) => ws.on_upgrade(move |socket| telemetry_loop(socket, s)),
        None => not_found(),
    }
}

async fn command_ws(State(app): State<Arc<AppState>>, Path(id): Path<String>, ws: WebSocketUpgrade) -> Response {
    match app.get(&id) {
        Some(s) => ws.on_upgrade(move |socket| command_loop(socket, s)),
        None => not_found(),
    }
}

fn to_ws(msg: &TelemetryMessage) -> Message {
    Message::Text(serde_json::to_string(msg).unwrap_or_default().into())
}

fn is_final(msg: &TelemetryMessage) -> bool {
    msg.kind == TelemetryKind::State && msg.payload.get("status") == Some(&json!(SessionStatus::Ended))
}

async fn telemetry_loop(socket: WebSocket, session: Arc<Session>) {
    let (mut sink, mut stream) = socket.split();
    let (snapshot, mut rx) = session.subscribe();
    let mut last = snapshot.seq;
    let done = is_final(&snapshot);
    if sink.send(to_ws(&snapshot)).await.is_err() || done {
        let _ = sink.close().await;
        return;
    }
    loop {
        tokio::select! {
            incoming = stream.next() => match incoming {
                // Clients have nothing to say here; anything but a close is ignored.
                Some(Ok(Message::Close(_))) | None | Some(Err(_)) => break,
                Some(Ok(_)) => {}
            },
            msg = rx.recv() => match msg {
                Ok(m) => {
                    last = m.seq;
                    let end = is_final(&m);
                    if sink.send(to_ws(&m)).await.is_err() || end {
                        break;
                    }
                }
                Err(broadcast::error::RecvError::Lagged(n)) => {
                    last += n;
                    let gap = TelemetryMessage::new(last, TelemetryKind::Gap, GapPayload { missed: n });
                    if sink.send(to_ws(&gap)).await.is_err() {
                        break;
                    }
                }
                Err(broadcast::error::RecvError::Closed) => break,
            },
        }
    }
    let _ = sink.close().await;
}

fn reply(session: &Session, kind: TelemetryKind, payload: impl serde::Serialize) -> TelemetryMessage {
    TelemetryMessage::new(session.last_seq(), kind, payload)
}

fn reject(session: &Session, id: Option<Value>, command: Option<&str>, reason: impl Into<String>) -> TelemetryMessage {
    reply(
        session,
        TelemetryKind::Reject,
        RejectPayload { id, command: command.map(str::to_string), reason: reason.into() },
    )
}

fn ack(session: &Session, id: Option<Value>, command: &str, effective_seq: Option<Option<u64>>) -> TelemetryMessage {
    reply(
        session,
        TelemetryKind::Ack,
        AckPayload { id, command: command.to_string(), effective_seq, state: Some(session.state()) },
    )
}

async fn command_loop(socket: WebSocket, session: Arc<Session>) {
    let (mut sink, mut stream) = socket.split();
    // Threshold acks arrive later, from another task.
    let (tx, mut replies) = mpsc::unbounded_channel::<TelemetryMessage>();
    let writer = tokio::spawn(async move {
        while let Some(m) = replies.recv().await {
            if sink.send(to_ws(&m)).await.is_err() {
                break;
            }
        }
        let _ = sink.close().await;
    });

    while let Some(Ok(msg)) = stream.next().await {
        let text = match msg {
            Message::Text(t) => t.to_string(),
            Message::Binary(b) => String::from_utf8_lossy(&b).into_owned(),
            Message::Close(_) => break,
            _ => continue,
        };
        let env: CommandEnvelope = match serde_json::from_str(&text) {
            Ok(e) => e,
            Err(e) => {
                let id = serde_json::from_str::<Value>(&text).ok().and_then(|v| v.get("id").cloned());
                let _ = tx.send(reject(&session, id, None, format!("bad command: {e}")));
                continue;
            }
        };
        handle_command(&session, env, &tx);
    }
    drop(tx);
    let _ = writer.await;
}

fn handle_command(session: &Arc<Session>, env: CommandEnvelope, tx: &mpsc::UnboundedSender<TelemetryMessage>) {
    let CommandEnvelope { id, command } = env;
    let name = command.name();
    let result = match command {
        OperatorCommand::SetThreshold { theta_s } => match session.set_threshold(theta_s) {
            Ok(pending) => {
                let (session, tx) = (Arc::clone(session), tx.clone());
                tokio::spawn(async move {
                    let seq = pending.await.unwrap_or(None);
                    let _ = tx.send(ack(&session, id, name, Some(seq)));
                });
                return;
            }
            Err(e) => Err(e.to_string()),
        },
        OperatorCommand::Pause => session.set_drone_state(DroneState::Pause).map_err(|e| e.to_string()),
        OperatorCommand::Retreat => session.set_drone_state(DroneState::Retreat).map_err(|e| e.to_string()),
        OperatorCommand::Resume => session.set_drone_state(DroneState::Flying).map_err(|e| e.to_string()),
        OperatorCommand::StartReplay => session.start().map_err(|e| e.to_string()),
        OperatorCommand::SetSpeed { speed } => {
            parse_speed(&speed).and_then(|s| session.set_speed(s).map_err(|e| e.to_string()))
        }
        OperatorCommand::Stop => session.stop().map_err(|e| e.to_string()),
    };
    let msg = match result {
        Ok(()) => ack(session, id, name, None),
        Err(reason) => reject(session, id, Some(name), reason),
    };
    let _ = tx.send(msg);
}
