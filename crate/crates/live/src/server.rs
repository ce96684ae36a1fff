//! HTTP and WebSocket front end. Each session runs its own tick loop task; connection handlers
//! only enqueue commands and forward outbound messages.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use futures::{SinkExt, StreamExt};
use serde::Deserialize;
use thiserror::Error;
use tokio::net::TcpListener;
use tokio::sync::{broadcast, mpsc, watch};

use sorts_core::{ExperimentSpec, Runtime};

use crate::protocol::{ClientMessage, ServerMessage, PROTOCOL_VERSION};
use crate::quantize::Control;
use crate::session::Session;

#[derive(Debug, Error)]
pub enum ServeError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Setup(#[from] sorts_core::selfplay::EpisodeError),
}

enum Command {
    Control {
        tick: u32,
        control: Control,
        reply: mpsc::Sender<String>,
    },
    Pause(mpsc::Sender<String>),
    Resume(mpsc::Sender<String>),
    Connected,
    Disconnected,
}

#[derive(Clone)]
struct SessionHandle {
    commands: mpsc::UnboundedSender<Command>,
    snapshots: broadcast::Sender<Arc<str>>,
    result: watch::Receiver<Option<Arc<str>>>,
    log: Arc<Mutex<String>>,
}

pub struct AppState {
    runtime: Arc<Runtime>,
    sessions: Mutex<HashMap<String, SessionHandle>>,
    next_id: AtomicU64,
    log_dir: Option<PathBuf>,
}

impl AppState {
    pub fn new(spec: ExperimentSpec, log_dir: Option<PathBuf>) -> Result<Arc<Self>, ServeError> {
        Ok(Arc::new(Self {
            runtime: Arc::new(Runtime::new(spec)?),
            sessions: Mutex::new(HashMap::new()),
            next_id: AtomicU64::new(1),
            log_dir,
        }))
    }

    pub fn session_count(&self) -> usize {
        self.sessions.lock().unwrap().len()
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/sessions/{id}/log", get(session_log))
        .route("/ws", get(ws_upgrade))
        .with_state(state)
}

/// Serves until the listener fails.
pub async fn run(listener: TcpListener, state: Arc<AppState>) -> Result<(), ServeError> {
    axum::serve(listener, router(state)).await?;
    Ok(())
}

/// Binds `addr` and serves `spec` forever.
pub async fn serve(addr: SocketAddr, spec: ExperimentSpec, log_dir: Option<PathBuf>) -> Result<(), ServeError> {
    let state = AppState::new(spec, log_dir)?;
    let listener = TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    run(listener, state).await
}

async fn health(State(state): State<Arc<AppState>>) -> impl IntoResponse {
    Json(serde_json::json!({
        "status": "ok",
        "version": PROTOCOL_VERSION,
        "sessions": state.session_count(),
    }))
}

async fn session_log(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Response {
    let handle = state.sessions.lock().unwrap().get(&id).cloned();
    match handle {
        Some(h) => {
            let body = h.log.lock().unwrap().clone();
            ([(header::CONTENT_TYPE, "application/x-ndjson")], body).into_response()
        }
        None => (StatusCode::NOT_FOUND, format!("no session {id}")).into_response(),
    }
}

#[derive(Debug, Deserialize)]
struct JoinQuery {
    session: Option<String>,
}

async fn ws_upgrade(
    ws: WebSocketUpgrade,
    State(state): State<Arc<AppState>>,
    Query(q): Query<JoinQuery>,
) -> Response {
    ws.on_upgrade(move |socket| client(socket, state, q.session))
}

fn spawn_session(state: &Arc<AppState>, session: Session) -> SessionHandle {
    let live = state.runtime.spec.live.clone();
    let (cmd_tx, cmd_rx) = mpsc::unbounded_channel();
    let (snap_tx, _) = broadcast::channel(live.client_queue);
    let (result_tx, result_rx) = watch::channel(None);
    let log = Arc::new(Mutex::new(String::new()));
    let handle = SessionHandle {
        commands: cmd_tx,
        snapshots: snap_tx.clone(),
        result: result_rx,
        log: log.clone(),
    };
    state
        .sessions
        .lock()
        .unwrap()
        .insert(session.id.clone(), handle.clone());
    let ctx = TickLoop {
        period: Duration::from_millis(live.tick_period_ms),
        budget: Duration::from_secs_f64(live.tick_period_ms as f64 / 1000.0 * live.planner_budget_fraction),
        grace: Duration::from_millis(live.disconnect_grace_ms),
        snapshots: snap_tx,
        result: result_tx,
        log,
        log_dir: state.log_dir.clone(),
    };
    tokio::spawn(ctx.run(session, cmd_rx));
    handle
}

struct TickLoop {
    period: Duration,
    budget: Duration,
    grace: Duration,
    snapshots: broadcast::Sender<Arc<str>>,
    result: watch::Sender<Option<Arc<str>>>,
    log: Arc<Mutex<String>>,
    log_dir: Option<PathBuf>,
}

impl TickLoop {
    async fn run(self, mut session: Session, mut commands: mpsc::UnboundedReceiver<Command>) {
        let mut clients: usize = 1;
        let mut alone_since: Option<Instant> = None;
        let mut paused = false;
        let mut timer = tokio::time::interval(self.period);
        timer.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
        timer.tick().await;
        let _ = self.snapshots.send(session.snapshot(None).to_json().into());
        loop {
            tokio::select! {
                cmd = commands.recv() => {
                    let Some(cmd) = cmd else { break };
                    match cmd {
                        Command::Control { tick, control, reply } => {
                            let msg = session
                                .submit_control(tick, &control)
                                .unwrap_or_else(|e| e.to_message());
                            let _ = reply.try_send(msg.to_json());
                        }
                        Command::Pause(reply) => {
                            paused = true;
                            let _ = reply.try_send(ServerMessage::Paused { tick: session.tick() }.to_json());
                        }
                        Command::Resume(reply) => {
                            paused = false;
                            let _ = reply.try_send(ServerMessage::Resumed { tick: session.tick() }.to_json());
                        }
                        Command::Connected => {
                            clients += 1;
                            alone_since = None;
                        }
                        Command::Disconnected => {
                            clients = clients.saturating_sub(1);
                            if clients == 0 {
                                alone_since = Some(Instant::now());
                            }
                        }
                    }
                }
                _ = timer.tick() => {
                    let abandoned = clients == 0 && alone_since.is_some_and(|t| t.elapsed() >= self.grace);
                    if paused || abandoned {
                        continue;
                    }
                    let deadline = Instant::now() + self.budget;
                    let (back, out) = tokio::task::spawn_blocking(move || {
                        let out = session.advance(Some(deadline));
                        (session, out)
                    })
                    .await
                    .expect("tick task panicked");
                    session = back;
                    *self.log.lock().unwrap() = session.log_jsonl();
                    match out {
                        Ok(messages) => {
                            for m in messages {
                                let text: Arc<str> = m.to_json().into();
                                if matches!(m, ServerMessage::Result { .. }) {
                                    self.persist(&session, &text);
                                    let _ = self.result.send(Some(text));
                                } else {
                                    let _ = self.snapshots.send(text);
                                }
                            }
                        }
                        Err(e) => {
                            log::error!("session {}: {e}", session.id);
                            let _ = self.snapshots.send(e.to_message().to_json().into());
                            break;
                        }
                    }
                    if session.is_finished() {
                        break;
                    }
                }
            }
        }
    }

    fn persist(&self, session: &Session, result: &str) {
        let Some(dir) = &self.log_dir else { return };
        let write = || -> std::io::Result<()> {
            std::fs::create_dir_all(dir)?;
            std::fs::write(dir.join(format!("{}.jsonl", session.id)), session.log_jsonl())?;
            std::fs::write(dir.join(format!("{}-result.json", session.id)), result)
        };
        if let Err(e) = write() {
            log::warn!("could not write session {} logs: {e}", session.id);
        }
    }
}

async fn client(socket: WebSocket, state: Arc<AppState>, join: Option<String>) {
    let (mut sink, mut stream) = socket.split();
    let (direct_tx, mut direct_rx) = mpsc::channel::<String>(state.runtime.spec.live.client_queue);

    let mut handle: Option<SessionHandle> = None;
    if let Some(id) = join {
        handle = state.sessions.lock().unwrap().get(&id).cloned();
        match &handle {
            Some(h) => {
                let _ = h.commands.send(Command::Connected);
            }
            None => {
                let msg = ServerMessage::Error { message: format!("no session {id}"), current_tick: None };
                let _ = sink.send(Message::Text(msg.to_json().into())).await;
                return;
            }
        }
    }

    // wait for a start message when not joining
    while handle.is_none() {
        let Some(Ok(msg)) = stream.next().await else { return };
        let Message::Text(text) = msg else { continue };
        let reply = match serde_json::from_str::<ClientMessage>(&text) {
            Ok(ClientMessage::Start { sector, opponent, opponent_sector }) => {
                let id = format!("s{}", state.next_id.fetch_add(1, Ordering::Relaxed));
                match Session::start(state.runtime.clone(), id, sector, opponent, opponent_sector) {
                    Ok(session) => {
                        let started = session.started_message();
                        handle = Some(spawn_session(&state, session));
                        started
                    }
                    Err(e) => e.to_message(),
                }
            }
            Ok(_) => ServerMessage::Error { message: "send start first".into(), current_tick: None },
            Err(e) => ServerMessage::Error { message: format!("bad message: {e}"), current_tick: None },
        };
        if sink.send(Message::Text(reply.to_json().into())).await.is_err() {
            if let Some(h) = &handle {
                let _ = h.commands.send(Command::Disconnected);
            }
            return;
        }
    }
    let handle = handle.unwrap();
    let mut snapshots = handle.snapshots.subscribe();
    let mut result = handle.result.clone();

    let writer = tokio::spawn(async move {
        loop {
            tokio::select! {
                biased;
                Some(text) = direct_rx.recv() => {
                    if sink.send(Message::Text(text.into())).await.is_err() { return; }
                }
                snap = snapshots.recv() => match snap {
                    Ok(text) => {
                        if sink.send(Message::Text(text.as_ref().into())).await.is_err() { return; }
                    }
                    Err(broadcast::error::RecvError::Lagged(n)) => log::debug!("client lagged by {n} snapshots"),
                    Err(broadcast::error::RecvError::Closed) => {
                        let _ = result.wait_for(|r| r.is_some()).await;
                    }
                },
                changed = result.changed() => {
                    if changed.is_err() && result.borrow().is_none() { return; }
                    let Some(text) = result.borrow_and_update().clone() else { continue };
                    // flush snapshots queued ahead of the result
                    while let Ok(s) = snapshots.try_recv() {
                        if sink.send(Message::Text(s.as_ref().into())).await.is_err() { return; }
                    }
                    let _ = sink.send(Message::Text(text.as_ref().into())).await;
                    return;
                }
            }
        }
    });

    while let Some(Ok(msg)) = stream.next().await {
        let Message::Text(text) = msg else {
            if matches!(msg, Message::Close(_)) { break; }
            continue;
        };
        let cmd = match serde_json::from_str::<ClientMessage>(&text) {
            Ok(ClientMessage::Control { tick, control }) => Command::Control { tick, control, reply: direct_tx.clone() },
            Ok(ClientMessage::Pause) => Command::Pause(direct_tx.clone()),
            Ok(ClientMessage::Resume) => Command::Resume(direct_tx.clone()),
            Ok(ClientMessage::Start { .. }) => {
                let m = ServerMessage::Error { message: "session already started".into(), current_tick: None };
                let _ = direct_tx.try_send(m.to_json());
                continue;
            }
            Err(e) => {
                let m = ServerMessage::Error { message: format!("bad message: {e}"), current_tick: None };
                let _ = direct_tx.try_send(m.to_json());
                continue;
            }
        };
        if handle.commands.send(cmd).is_err() {
            break;
        }
    }
    let _ = handle.commands.send(Command::Disconnected);
    writer.abort();
}
