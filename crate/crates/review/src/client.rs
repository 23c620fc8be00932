//! Scripted reviewer: a headless WebSocket client used by tests, the
//! acceptance harness and the CLI's `review` command.

use std::collections::HashMap;
use std::time::Duration;

use futures_util::{SinkExt, StreamExt};
use thiserror::Error;
use tokio::net::TcpStream;
use tokio_tungstenite::tungstenite::Message as WsMessage;
use tokio_tungstenite::{MaybeTlsStream, WebSocketStream};

use star_core::PointCloud;

use crate::protocol::{decode, encode, AssemblyError, CloudAssembler, DecodeError, Message, WireVolume};
use crate::session::{DecisionValue, SessionId, SessionState};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(20);

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("websocket: {0}")]
    Ws(#[from] tokio_tungstenite::tungstenite::Error),
    #[error("timed out waiting for {0}")]
    Timeout(String),
    #[error("connection closed")]
    Closed,
    #[error("undecodable server message: {0}")]
    Decode(#[from] DecodeError),
    #[error("cloud reassembly: {0}")]
    Assembly(#[from] AssemblyError),
    #[error("server error {code}: {detail}")]
    Server { code: String, detail: String },
}

pub struct ReviewerClient {
    ws: WebSocketStream<MaybeTlsStream<TcpStream>>,
    assemblers: HashMap<SessionId, CloudAssembler>,
    /// Latest fully reassembled cloud per session, with its revision.
    pub clouds: HashMap<SessionId, (u32, PointCloud)>,
    /// Every message received, in order.
    pub received: Vec<Message>,
    pub timeout: Duration,
}

impl ReviewerClient {
    pub async fn connect(url: &str) -> Result<Self, ClientError> {
        let (ws, _) = tokio_tungstenite::connect_async(url).await?;
        Ok(ReviewerClient {
            ws,
            assemblers: HashMap::new(),
            clouds: HashMap::new(),
            received: Vec::new(),
            timeout: DEFAULT_TIMEOUT,
        })
    }

    pub async fn send(&mut self, msg: &Message) -> Result<(), ClientError> {
        self.send_text(encode(msg)).await
    }

    pub async fn send_text(&mut self, text: String) -> Result<(), ClientError> {
        Ok(self.ws.send(WsMessage::Text(text.into())).await?)
    }

    pub async fn send_binary(&mut self, bytes: Vec<u8>) -> Result<(), ClientError> {
        Ok(self.ws.send(WsMessage::Binary(bytes.into())).await?)
    }

    pub async fn decide(&mut self, session_id: SessionId, value: DecisionValue) -> Result<(), ClientError> {
        self.send(&Message::Decision { session_id, value }).await
    }

    /// Next server message. Cloud chunks are also fed to the reassembler.
    pub async fn recv(&mut self) -> Result<Message, ClientError> {
        loop {
            let frame = tokio::time::timeout(self.timeout, self.ws.next())
                .await
                .map_err(|_| ClientError::Timeout("a server message".into()))?;
            let bytes = match frame {
                Some(Ok(WsMessage::Text(t))) => t.as_bytes().to_vec(),
                Some(Ok(WsMessage::Binary(b))) => b.to_vec(),
                Some(Ok(WsMessage::Close(_))) | None => return Err(ClientError::Closed),
                Some(Ok(_)) => continue,
                Some(Err(e)) => return Err(e.into()),
            };
            let msg = decode(&bytes)?;
            if let Message::Cloud { session_id, .. } = &msg {
                if let Some(done) = self.assemblers.entry(*session_id).or_default().push(&msg)? {
                    self.clouds.insert(*session_id, done);
                }
            }
            self.received.push(msg.clone());
            return Ok(msg);
        }
    }

    /// Receives until `pred` matches. An error message from the server ends
    /// the wait unless `pred` accepts it.
    pub async fn recv_until(
        &mut self,
        what: &str,
        mut pred: impl FnMut(&Message) -> bool,
    ) -> Result<Message, ClientError> {
        let deadline = tokio::time::Instant::now() + self.timeout;
        loop {
            let remaining = deadline.saturating_duration_since(tokio::time::Instant::now());
            let msg = tokio::time::timeout(remaining, self.recv())
                .await
                .map_err(|_| ClientError::Timeout(what.into()))??;
            if pred(&msg) {
                return Ok(msg);
            }
            if let Message::Error { code, detail } = msg {
                return Err(ClientError::Server { code, detail });
            }
        }
    }

    pub async fn wait_phase(&mut self, session_id: SessionId, phase: SessionState) -> Result<(), ClientError> {
        self.recv_until(&format!("session {session_id} {phase}"), |m| {
            matches!(m, Message::Status { session_id: s, phase: p } if *s == session_id && *p == phase)
        })
        .await
        .map(|_| ())
    }

    pub async fn close(mut self) -> Result<(), ClientError> {
        self.ws.close(None).await?;
        Ok(())
    }
}

/// What the scripted review observed.
#[derive(Debug, Clone)]
pub struct ReviewOutcome {
    pub session_id: SessionId,
    pub cluster_size: usize,
    pub initial_plan: Option<Message>,
    pub revised_plan: Option<Message>,
    /// Reassembled cloud of the last revision received.
    pub cloud: Option<(u32, PointCloud)>,
    /// Status phases received for the session, in order.
    pub phases: Vec<SessionState>,
}

/// Drives one session like a reviewer would: wait for the detection, then
/// either approve right away (`volumes == None`) or Modify, send the
/// volumes, wait for the revised plan and confirm it with Repair; finally
/// wait for the execution to finish.
pub async fn scripted_review(
    url: &str,
    session: Option<SessionId>,
    volumes: Option<Vec<WireVolume>>,
) -> Result<ReviewOutcome, ClientError> {
    let mut client = ReviewerClient::connect(url).await?;
    let (session_id, cluster_size) = match client
        .recv_until("a detection", |m| {
            matches!(m, Message::Detection { session_id, .. } if session.is_none_or(|s| s == *session_id))
        })
        .await?
    {
        Message::Detection {
            session_id,
            cluster_size,
            ..
        } => (session_id, cluster_size),
        _ => unreachable!(),
    };
    client.wait_phase(session_id, SessionState::AwaitingReview).await?;
    let initial_plan = last_plan(&client.received, session_id);

    let mut revised_plan = None;
    if let Some(volumes) = volumes {
        client.decide(session_id, DecisionValue::Modify).await?;
        client.wait_phase(session_id, SessionState::Modifying).await?;
        client
            .send(&Message::Exclusions { session_id, volumes })
            .await?;
        client.wait_phase(session_id, SessionState::RevisedPending).await?;
        client.wait_phase(session_id, SessionState::AwaitingReview).await?;
        revised_plan = last_plan(&client.received, session_id);
    }

    client.decide(session_id, DecisionValue::Repair).await?;
    client.wait_phase(session_id, SessionState::Done).await?;
    let phases = client
        .received
        .iter()
        .filter_map(|m| match m {
            Message::Status { session_id: s, phase } if *s == session_id => Some(*phase),
            _ => None,
        })
        .collect();
    let cloud = client.clouds.get(&session_id).cloned();
    client.close().await?;
    Ok(ReviewOutcome {
        session_id,
        cluster_size,
        initial_plan,
        revised_plan,
        cloud,
        phases,
    })
}

fn last_plan(received: &[Message], session_id: SessionId) -> Option<Message> {
    received
        .iter()
        .rev()
        .find(|m| matches!(m, Message::Plan { session_id: s, .. } if *s == session_id))
        .cloned()
}
