//! Append-only newline-delimited JSON event log, one file per session.
//!
//! The first line opens the session with its cluster; every following line
//! is one accepted event with its timestamp. Replaying the lines through
//! [`ReviewSession::advance`] rebuilds the session exactly.

use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use star_core::Cluster;

use crate::session::{Event, ReviewSession, SessionError, SessionId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum LogRecord {
    Open {
        session_id: SessionId,
        cluster: Arc<Cluster>,
    },
    Event {
        timestamp: f64,
        event: Event,
    },
}

#[derive(Debug, Error)]
pub enum LogError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}:{line}: {detail}")]
    Parse {
        path: PathBuf,
        line: usize,
        detail: String,
    },
    #[error("{0}: log does not start with an open record")]
    MissingOpen(PathBuf),
    #[error("{path}:{line}: {source}")]
    Replay {
        path: PathBuf,
        line: usize,
        #[source]
        source: SessionError,
    },
}

pub fn log_path(dir: &Path, session_id: SessionId) -> PathBuf {
    dir.join(format!("session_{session_id}.ndjson"))
}

pub struct EventLog {
    path: PathBuf,
    out: BufWriter<File>,
}

impl EventLog {
    /// Starts a fresh log for `session` (truncating any old one) and records
    /// its history so far.
    pub fn create(dir: &Path, session: &ReviewSession) -> Result<Self, LogError> {
        let path = log_path(dir, session.session_id);
        let io_err = |source| LogError::Io {
            path: path.clone(),
            source,
        };
        std::fs::create_dir_all(dir).map_err(io_err)?;
        let file = File::create(&path).map_err(io_err)?;
        let mut log = EventLog {
            path: path.clone(),
            out: BufWriter::new(file),
        };
        log.write(&LogRecord::Open {
            session_id: session.session_id,
            cluster: session.cluster.clone(),
        })?;
        for (timestamp, event) in &session.history {
            log.append(*timestamp, event)?;
        }
        Ok(log)
    }

    /// Reopens an existing log for appending.
    pub fn reopen(path: &Path) -> Result<Self, LogError> {
        let file = OpenOptions::new()
            .append(true)
            .open(path)
            .map_err(|source| LogError::Io {
                path: path.to_path_buf(),
                source,
            })?;
        Ok(EventLog {
            path: path.to_path_buf(),
            out: BufWriter::new(file),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&mut self, timestamp: f64, event: &Event) -> Result<(), LogError> {
        self.write(&LogRecord::Event {
            timestamp,
            event: event.clone(),
        })
    }

    fn write(&mut self, record: &LogRecord) -> Result<(), LogError> {
        let line = serde_json::to_string(record).expect("log records always serialize");
        writeln!(self.out, "{line}")
            .and_then(|_| self.out.flush())
            .map_err(|source| LogError::Io {
                path: self.path.clone(),
                source,
            })
    }

    /// Flushes and fsyncs.
    pub fn sync(&mut self) -> Result<(), LogError> {
        self.out
            .flush()
            .and_then(|_| self.out.get_ref().sync_all())
            .map_err(|source| LogError::Io {
                path: self.path.clone(),
                source,
            })
    }
}

/// Rebuilds a session from log text. `path` is only used in error messages.
pub fn replay_reader(reader: impl BufRead, path: &Path) -> Result<ReviewSession, LogError> {
    let mut session: Option<ReviewSession> = None;
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|source| LogError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record: LogRecord = serde_json::from_str(&line).map_err(|e| LogError::Parse {
            path: path.to_path_buf(),
            line: line_no,
            detail: e.to_string(),
        })?;
        match (record, session.as_mut()) {
            (LogRecord::Open { session_id, cluster }, None) => {
                session = Some(ReviewSession::new(session_id, cluster));
            }
            (LogRecord::Open { .. }, Some(_)) => {
                return Err(LogError::Parse {
                    path: path.to_path_buf(),
                    line: line_no,
                    detail: "second open record".into(),
                })
            }
            (LogRecord::Event { .. }, None) => return Err(LogError::MissingOpen(path.to_path_buf())),
            (LogRecord::Event { timestamp, event }, Some(s)) => {
                s.advance(event, timestamp).map_err(|source| LogError::Replay {
                    path: path.to_path_buf(),
                    line: line_no,
                    source,
                })?;
            }
        }
    }
    session.ok_or_else(|| LogError::MissingOpen(path.to_path_buf()))
}

pub fn replay_file(path: &Path) -> Result<ReviewSession, LogError> {
    let file = File::open(path).map_err(|source| LogError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    replay_reader(BufReader::new(file), path)
}

/// Replays every `session_*.ndjson` in `dir`, ordered by session id.
pub fn replay_dir(dir: &Path) -> Result<Vec<ReviewSession>, LogError> {
    let entries = std::fs::read_dir(dir).map_err(|source| LogError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut sessions = Vec::new();
    for entry in entries {
        let path = entry
            .map_err(|source| LogError::Io {
                path: dir.to_path_buf(),
                source,
            })?
            .path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
        if name.starts_with("session_") && name.ends_with(".ndjson") {
            sessions.push(replay_file(&path)?);
        }
    }
    sessions.sort_by_key(|s| s.session_id);
    Ok(sessions)
}
