//! Human-in-the-loop review of repair plans: per-cluster session state
//! machine, JSON wire protocol, event log, and the WebSocket service that
//! connects reviewer clients to the planners.

pub mod client;
pub mod config;
pub mod demo;
pub mod engine;
pub mod log;
pub mod protocol;
pub mod service;
pub mod session;

pub use config::ScenarioConfig;
pub use protocol::{decode, encode, Message};
pub use session::{DecisionValue, Event, ReviewSession, SessionState};
