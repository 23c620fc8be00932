//! WebSocket review service.
//!
//! All session mutations go through one actor task fed by an unbounded
//! command queue. Connections only decode frames and forward them; re-plans
//! run on the blocking pool and post their result back to the queue; the
//! simulated navigation and execution phases are timers that do the same.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use axum::extract::ws::{Message as WsMessage, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::Response;
use axum::routing::get;
use axum::Router;
use futures_util::{SinkExt, StreamExt};
use thiserror::Error;
use tokio::net::TcpListener;
use tokio::sync::{mpsc, oneshot};
use tokio::task::JoinHandle;
use tower_http::services::ServeDir;

use star_core::base::{dijkstra_path, OccupancyGrid};
use star_core::coverage::{replan_after_exclusion, PlanError, PlannerParams, RepairPlan};
use star_core::exclusion::apply_exclusions;
use star_core::PointCloud;

use crate::config::{ScenarioConfig, SimulationSection};
use crate::engine::{self, now, EngineError};
use crate::log::{log_path, replay_dir, EventLog, LogError};
use crate::protocol::{chunk_cloud, codes, decode, encode, Message};
use crate::session::{Event, ReviewSession, SessionError, SessionId, SessionState, SessionStore};

type ClientId = u64;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error(transparent)]
    Config(#[from] crate::config::ConfigError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Log(#[from] LogError),
    #[error("cannot listen on {addr}: {source}")]
    Bind {
        addr: String,
        #[source]
        source: std::io::Error,
    },
    #[error("server error: {0}")]
    Serve(#[source] std::io::Error),
    #[error("service task failed: {0}")]
    Task(String),
}

enum Command {
    Connect {
        client: ClientId,
        tx: mpsc::UnboundedSender<String>,
    },
    Disconnect {
        client: ClientId,
    },
    Inbound {
        client: ClientId,
        bytes: Vec<u8>,
    },
    Replanned {
        session_id: SessionId,
        client: Option<ClientId>,
        result: Result<(RepairPlan, PointCloud), PlanError>,
    },
    Timer {
        session_id: SessionId,
        event: Event,
    },
    Snapshot {
        reply: oneshot::Sender<Vec<ReviewSession>>,
    },
    Shutdown {
        reply: oneshot::Sender<()>,
    },
}

struct Runtime {
    params: PlannerParams,
    log: EventLog,
    /// Cloud of the current revision, as sent to clients.
    retained: PointCloud,
}

struct Actor {
    store: SessionStore,
    runtimes: BTreeMap<SessionId, Runtime>,
    clients: BTreeMap<ClientId, mpsc::UnboundedSender<String>>,
    queue: mpsc::UnboundedSender<Command>,
    simulation: SimulationSection,
    snapshot_uri: String,
    grid: Option<OccupancyGrid>,
    start: Option<[f64; 2]>,
}

impl Actor {
    async fn run(mut self, mut rx: mpsc::UnboundedReceiver<Command>) {
        // sessions left mid-flight by a previous run pick up where they were
        let ids: Vec<SessionId> = self.store.iter().map(|s| s.session_id).collect();
        for id in ids {
            self.resume(id);
        }
        while let Some(cmd) = rx.recv().await {
            match cmd {
                Command::Connect { client, tx } => {
                    log::debug!("client {client} connected");
                    for msg in self.snapshot_messages() {
                        let _ = tx.send(encode(&msg));
                    }
                    self.clients.insert(client, tx);
                }
                Command::Disconnect { client } => {
                    log::debug!("client {client} disconnected");
                    self.clients.remove(&client);
                }
                Command::Inbound { client, bytes } => self.inbound(client, &bytes),
                Command::Replanned {
                    session_id,
                    client,
                    result,
                } => self.replanned(session_id, client, result),
                Command::Timer { session_id, event } => {
                    if let Err(e) = self.apply(session_id, event) {
                        log::warn!("session {session_id}: {e}");
                    }
                }
                Command::Snapshot { reply } => {
                    let _ = reply.send(self.store.iter().cloned().collect());
                }
                Command::Shutdown { reply } => {
                    for (id, rt) in &mut self.runtimes {
                        if let Err(e) = rt.log.sync() {
                            log::error!("session {id}: {e}");
                        }
                    }
                    self.clients.clear();
                    let _ = reply.send(());
                    break;
                }
            }
        }
    }

    fn send(&self, client: ClientId, msg: &Message) {
        if let Some(tx) = self.clients.get(&client) {
            let _ = tx.send(encode(msg));
        }
    }

    fn broadcast(&self, msg: &Message) {
        let text = encode(msg);
        for tx in self.clients.values() {
            let _ = tx.send(text.clone());
        }
    }

    fn snapshot_messages(&self) -> Vec<Message> {
        let mut out = Vec::new();
        for s in self.store.iter() {
            out.push(Message::Detection {
                session_id: s.session_id,
                cluster_size: s.cluster.len(),
                centroid: s.cluster.centroid.to_array(),
                image_uri: self.snapshot_uri.clone(),
            });
            out.extend(self.session_view(s));
            out.push(Message::Status {
                session_id: s.session_id,
                phase: s.state,
            });
        }
        out
    }

    /// Goal, cloud and plan of the current revision.
    fn session_view(&self, s: &ReviewSession) -> Vec<Message> {
        let mut out = Vec::new();
        if let Some(goal) = &s.goal {
            out.push(Message::goal(s.session_id, goal));
        }
        if let Some(rt) = self.runtimes.get(&s.session_id) {
            out.extend(chunk_cloud(s.session_id, s.revision, &rt.retained));
        }
        if let Some(plan) = &s.current_plan {
            out.push(Message::plan(s.session_id, s.revision, plan));
        }
        out
    }

    fn inbound(&mut self, client: ClientId, bytes: &[u8]) {
        let msg = match decode(bytes) {
            Ok(m) => m,
            Err(e) => {
                log::debug!("client {client}: {e}");
                self.send(client, &e.to_message());
                return;
            }
        };
        let result = match &msg {
            Message::Decision { session_id, value } => {
                self.apply(*session_id, Event::Decision { value: *value })
            }
            Message::Exclusions { session_id, .. } => self.submit_exclusions(client, *session_id, &msg),
            other => {
                self.send(
                    client,
                    &Message::error(
                        codes::UNEXPECTED_MESSAGE,
                        format!("clients may not send {:?} messages", other.type_name()),
                    ),
                );
                return;
            }
        };
        if let Err(e) = result {
            let code = match e {
                SessionError::IllegalTransition { .. } => codes::ILLEGAL_TRANSITION,
                SessionError::UnknownSession(_) => codes::UNKNOWN_SESSION,
            };
            self.send(client, &Message::error(code, e.to_string()));
        }
    }

    fn submit_exclusions(
        &mut self,
        client: ClientId,
        session_id: SessionId,
        msg: &Message,
    ) -> Result<SessionState, SessionError> {
        let cluster = self.store.get(session_id)?.cluster.clone();
        let set = match msg.to_exclusion_set(cluster.id) {
            Some(Ok(set)) => set,
            // decode already validated every volume
            _ => unreachable!("validated exclusions message"),
        };
        let state = self.apply(session_id, Event::ExclusionSubmitted { set: set.clone() })?;
        self.spawn_replan(session_id, Some(client));
        Ok(state)
    }

    fn spawn_replan(&self, session_id: SessionId, client: Option<ClientId>) {
        let (Ok(session), Some(rt)) = (self.store.get(session_id), self.runtimes.get(&session_id)) else {
            return;
        };
        let cluster = session.cluster.clone();
        let set = session.exclusions.clone();
        let params = rt.params;
        let queue = self.queue.clone();
        tokio::spawn(async move {
            let result = tokio::task::spawn_blocking(move || replan_after_exclusion(&cluster, &set, &params))
                .await
                .unwrap_or_else(|e| Err(PlanError::InvalidParameter(format!("planner task failed: {e}"))));
            let _ = queue.send(Command::Replanned {
                session_id,
                client,
                result,
            });
        });
    }

    fn replanned(
        &mut self,
        session_id: SessionId,
        client: Option<ClientId>,
        result: Result<(RepairPlan, PointCloud), PlanError>,
    ) {
        let Ok(session) = self.store.get(session_id) else {
            return;
        };
        let plan = match result {
            Ok((plan, retained)) => {
                if let Some(rt) = self.runtimes.get_mut(&session_id) {
                    rt.retained = retained;
                }
                plan
            }
            Err(e) => {
                let code = match e {
                    PlanError::EmptyAfterExclusion(_) => codes::EMPTY_AFTER_EXCLUSION,
                    _ => codes::PLANNING_FAILED,
                };
                let retained = apply_exclusions(&session.cluster.cloud, &session.exclusions).retained;
                let msg = Message::error(code, format!("session {session_id}: {e}"));
                match client {
                    Some(c) => self.send(c, &msg),
                    None => self.broadcast(&msg),
                }
                let rt = self.runtimes.get_mut(&session_id).expect("runtime per session");
                rt.retained = retained;
                RepairPlan::empty(session.cluster.id, rt.params.spacing, rt.params.offset)
            }
        };
        if let Err(e) = self.apply(session_id, Event::RevisionReady { plan }) {
            log::warn!("session {session_id}: {e}");
        }
    }

    /// Advances a session, records the event and performs the follow-up of
    /// the new state.
    fn apply(&mut self, session_id: SessionId, event: Event) -> Result<SessionState, SessionError> {
        let from = self.store.get(session_id)?.state;
        let kind = event.kind();
        let to = self.store.advance(session_id, event, now())?;
        let session = self.store.get(session_id).expect("advanced above");
        log::info!("session {session_id}: {from} -> {to} on {kind}");
        if let Some(rt) = self.runtimes.get_mut(&session_id) {
            let (t, e) = session.history.last().expect("just appended");
            if let Err(err) = rt.log.append(*t, e) {
                log::error!("session {session_id}: {err}");
            }
        }
        if to == SessionState::AwaitingReview {
            for msg in self.session_view(session) {
                self.broadcast(&msg);
            }
        }
        self.broadcast(&Message::Status {
            session_id,
            phase: to,
        });
        self.on_enter(session_id, to);
        Ok(to)
    }

    fn on_enter(&self, session_id: SessionId, state: SessionState) {
        match state {
            SessionState::Navigating => {
                self.log_route(session_id);
                self.schedule(session_id, Event::NavigationDone, self.simulation.navigation_ms);
            }
            SessionState::Executing => {
                self.schedule(session_id, Event::ExecutionDone, self.simulation.execution_ms);
            }
            _ => {}
        }
    }

    /// Restarts whatever was in flight for a recovered session.
    fn resume(&self, session_id: SessionId) {
        let Ok(s) = self.store.get(session_id) else {
            return;
        };
        match s.state {
            SessionState::RevisedPending => self.spawn_replan(session_id, None),
            SessionState::Navigating | SessionState::Executing => self.on_enter(session_id, s.state),
            _ => {}
        }
    }

    fn schedule(&self, session_id: SessionId, event: Event, delay_ms: u64) {
        let queue = self.queue.clone();
        tokio::spawn(async move {
            tokio::time::sleep(Duration::from_millis(delay_ms)).await;
            let _ = queue.send(Command::Timer { session_id, event });
        });
    }

    fn log_route(&self, session_id: SessionId) {
        let (Some(grid), Some(start), Ok(session)) = (&self.grid, self.start, self.store.get(session_id)) else {
            return;
        };
        let Some(goal) = session.goal else {
            return;
        };
        let cells = (
            grid.cell_at(star_core::Point3::new(start[0], start[1], 0.0)),
            grid.cell_at(goal.position),
        );
        match cells {
            (Some(a), Some(b)) => match dijkstra_path(grid, a, b) {
                Ok(path) => log::info!(
                    "session {session_id}: base path {} cells, cost {:.5} m",
                    path.cells.len(),
                    path.cost * grid.resolution()
                ),
                Err(e) => log::warn!("session {session_id}: {e}"),
            },
            _ => log::warn!("session {session_id}: start or goal outside the grid"),
        }
    }
}

#[derive(Clone)]
struct AppState {
    queue: mpsc::UnboundedSender<Command>,
    next_client: Arc<AtomicU64>,
}

async fn ws_handler(ws: WebSocketUpgrade, State(app): State<AppState>) -> Response {
    ws.on_upgrade(move |socket| client_loop(socket, app))
}

async fn client_loop(socket: WebSocket, app: AppState) {
    let client = app.next_client.fetch_add(1, Ordering::Relaxed);
    let (tx, mut rx) = mpsc::unbounded_channel::<String>();
    let (mut sink, mut stream) = socket.split();
    if app.queue.send(Command::Connect { client, tx }).is_err() {
        return;
    }
    let mut writer = tokio::spawn(async move {
        while let Some(text) = rx.recv().await {
            if sink.send(WsMessage::Text(text.into())).await.is_err() {
                return;
            }
        }
        let _ = sink.close().await;
    });
    loop {
        tokio::select! {
            _ = &mut writer => break,
            frame = stream.next() => {
                let bytes = match frame {
                    Some(Ok(WsMessage::Text(t))) => t.as_str().as_bytes().to_vec(),
                    Some(Ok(WsMessage::Binary(b))) => b.to_vec(),
                    Some(Ok(WsMessage::Close(_))) | Some(Err(_)) | None => break,
                    Some(Ok(_)) => continue,
                };
                if app.queue.send(Command::Inbound { client, bytes }).is_err() {
                    break;
                }
            }
        }
    }
    let _ = app.queue.send(Command::Disconnect { client });
}

/// A started service.
pub struct ServiceHandle {
    addr: SocketAddr,
    queue: mpsc::UnboundedSender<Command>,
    shutdown: Option<oneshot::Sender<()>>,
    server: JoinHandle<Result<(), std::io::Error>>,
}

impl ServiceHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn ws_url(&self) -> String {
        format!("ws://{}/ws", self.addr)
    }

    /// Current state of every session.
    pub async fn sessions(&self) -> Vec<ReviewSession> {
        let (reply, rx) = oneshot::channel();
        if self.queue.send(Command::Snapshot { reply }).is_err() {
            return Vec::new();
        }
        rx.await.unwrap_or_default()
    }

    /// Closes client connections, flushes the event logs and stops.
    pub async fn shutdown(mut self) -> Result<(), ServiceError> {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        match self.server.await {
            Ok(Ok(())) => Ok(()),
            Ok(Err(e)) => Err(ServiceError::Serve(e)),
            Err(e) => Err(ServiceError::Task(e.to_string())),
        }
    }
}

/// Validates the config, opens or recovers sessions, binds the listener and
/// starts serving in the background.
pub async fn start(config: ScenarioConfig) -> Result<ServiceHandle, ServiceError> {
    config.validate()?;
    let grid = config.grid.as_deref().map(engine::load_grid).transpose()?;
    let log_dir = config.log_dir.clone();

    let sessions = if config.recover {
        let sessions = if log_dir.is_dir() {
            replay_dir(&log_dir)?
        } else {
            Vec::new()
        };
        log::info!("recovered {} sessions from {}", sessions.len(), log_dir.display());
        sessions
    } else {
        let cfg = config.clone();
        let grid = grid.clone();
        tokio::task::spawn_blocking(move || -> Result<_, EngineError> {
            let scene = engine::load_scene(&cfg)?;
            engine::open_sessions(&scene, grid.as_ref(), &cfg)
        })
        .await
        .map_err(|e| ServiceError::Task(e.to_string()))??
    };

    let mut store = SessionStore::new();
    let mut runtimes = BTreeMap::new();
    for s in sessions {
        let log = if config.recover {
            EventLog::reopen(&log_path(&log_dir, s.session_id))?
        } else {
            EventLog::create(&log_dir, &s)?
        };
        let retained = apply_exclusions(&s.cluster.cloud, &s.exclusions).retained;
        let params = engine::session_params(&config, s.goal.as_ref());
        log::info!(
            "session {}: {} points, state {}",
            s.session_id,
            s.cluster.len(),
            s.state
        );
        runtimes.insert(s.session_id, Runtime { params, log, retained });
        store.insert(s);
    }

    let addr = format!("{}:{}", config.host, config.port);
    let listener = TcpListener::bind(&addr)
        .await
        .map_err(|source| ServiceError::Bind { addr: addr.clone(), source })?;
    let local = listener.local_addr().map_err(ServiceError::Serve)?;
    log::info!("listening on ws://{local}/ws");

    let (queue, rx) = mpsc::unbounded_channel();
    let actor = Actor {
        store,
        runtimes,
        clients: BTreeMap::new(),
        queue: queue.clone(),
        simulation: config.simulation.clone(),
        snapshot_uri: config.snapshot_uri.clone(),
        grid,
        start: config.robot.start,
    };
    let actor_task = tokio::spawn(actor.run(rx));

    let app = AppState {
        queue: queue.clone(),
        next_client: Arc::new(AtomicU64::new(1)),
    };
    let mut router = Router::new().route("/ws", get(ws_handler)).with_state(app);
    if let Some(dir) = &config.asset_dir {
        router = router.fallback_service(ServeDir::new(PathBuf::from(dir)));
    }

    let (shutdown_tx, shutdown_rx) = oneshot::channel::<()>();
    let actor_queue = queue.clone();
    let server = tokio::spawn(async move {
        let signal = async move {
            let _ = shutdown_rx.await;
            // close client sockets and flush logs before the server drains
            let (reply, done) = oneshot::channel();
            if actor_queue.send(Command::Shutdown { reply }).is_ok() {
                let _ = done.await;
            }
        };
        let result = axum::serve(listener, router).with_graceful_shutdown(signal).await;
        let _ = actor_task.await;
        log::info!("service stopped");
        result
    });

    Ok(ServiceHandle {
        addr: local,
        queue,
        shutdown: Some(shutdown_tx),
        server,
    })
}

/// Runs until Ctrl-C, then shuts down cleanly.
pub async fn serve(config: ScenarioConfig) -> Result<(), ServiceError> {
    let handle = start(config).await?;
    let _ = tokio::signal::ctrl_c().await;
    log::info!("interrupt received, shutting down");
    handle.shutdown().await
}

