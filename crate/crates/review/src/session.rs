//! Per-cluster review lifecycle.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use star_core::base::GoalPose;
use star_core::coverage::RepairPlan;
use star_core::{Cluster, ExclusionSet};

pub type SessionId = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionState {
    Detected,
    AwaitingReview,
    Modifying,
    RevisedPending,
    Approved,
    Rejected,
    Navigating,
    Executing,
    Done,
}

impl SessionState {
    pub const ALL: [SessionState; 9] = [
        SessionState::Detected,
        SessionState::AwaitingReview,
        SessionState::Modifying,
        SessionState::RevisedPending,
        SessionState::Approved,
        SessionState::Rejected,
        SessionState::Navigating,
        SessionState::Executing,
        SessionState::Done,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SessionState::Detected => "detected",
            SessionState::AwaitingReview => "awaiting_review",
            SessionState::Modifying => "modifying",
            SessionState::RevisedPending => "revised_pending",
            SessionState::Approved => "approved",
            SessionState::Rejected => "rejected",
            SessionState::Navigating => "navigating",
            SessionState::Executing => "executing",
            SessionState::Done => "done",
        }
    }

    /// No event leaves these states.
    pub fn is_terminal(self) -> bool {
        matches!(
            self,
            SessionState::Rejected | SessionState::Done | SessionState::Approved
        )
    }
}

impl fmt::Display for SessionState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecisionValue {
    Repair,
    Modify,
    Reject,
}

impl DecisionValue {
    pub const ALL: [DecisionValue; 3] = [
        DecisionValue::Repair,
        DecisionValue::Modify,
        DecisionValue::Reject,
    ];
}

/// Inputs to the state machine. Payload-carrying events record what the
/// planner produced so that a log replay needs no re-planning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Event {
    DetectionReady {
        plan: RepairPlan,
        goal: Option<GoalPose>,
    },
    Decision {
        value: DecisionValue,
    },
    ExclusionSubmitted {
        set: ExclusionSet,
    },
    RevisionReady {
        plan: RepairPlan,
    },
    RevisionConfirmed,
    NavigationDone,
    ExecutionDone,
}

/// Payload-free view of an [`Event`], used by the transition table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EventKind {
    DetectionReady,
    Decision(DecisionValue),
    ExclusionSubmitted,
    RevisionReady,
    RevisionConfirmed,
    NavigationDone,
    ExecutionDone,
}

impl EventKind {
    pub const ALL: [EventKind; 9] = [
        EventKind::DetectionReady,
        EventKind::Decision(DecisionValue::Repair),
        EventKind::Decision(DecisionValue::Modify),
        EventKind::Decision(DecisionValue::Reject),
        EventKind::ExclusionSubmitted,
        EventKind::RevisionReady,
        EventKind::RevisionConfirmed,
        EventKind::NavigationDone,
        EventKind::ExecutionDone,
    ];
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EventKind::DetectionReady => f.write_str("DetectionReady"),
            EventKind::Decision(v) => write!(f, "Decision({v:?})"),
            EventKind::ExclusionSubmitted => f.write_str("ExclusionSubmitted"),
            EventKind::RevisionReady => f.write_str("RevisionReady"),
            EventKind::RevisionConfirmed => f.write_str("RevisionConfirmed"),
            EventKind::NavigationDone => f.write_str("NavigationDone"),
            EventKind::ExecutionDone => f.write_str("ExecutionDone"),
        }
    }
}

impl Event {
    pub fn kind(&self) -> EventKind {
        match self {
            Event::DetectionReady { .. } => EventKind::DetectionReady,
            Event::Decision { value } => EventKind::Decision(*value),
            Event::ExclusionSubmitted { .. } => EventKind::ExclusionSubmitted,
            Event::RevisionReady { .. } => EventKind::RevisionReady,
            Event::RevisionConfirmed => EventKind::RevisionConfirmed,
            Event::NavigationDone => EventKind::NavigationDone,
            Event::ExecutionDone => EventKind::ExecutionDone,
        }
    }
}

/// The transition table. `None` means the pair is illegal.
pub fn transition(state: SessionState, event: EventKind) -> Option<SessionState> {
    use DecisionValue::*;
    use SessionState::*;
    match (state, event) {
        (Detected, EventKind::DetectionReady) => Some(AwaitingReview),
        (AwaitingReview, EventKind::Decision(Repair)) => Some(Navigating),
        (AwaitingReview, EventKind::Decision(Reject)) => Some(Rejected),
        (AwaitingReview, EventKind::Decision(Modify)) => Some(Modifying),
        (Modifying, EventKind::ExclusionSubmitted) => Some(RevisedPending),
        (RevisedPending, EventKind::RevisionReady) => Some(AwaitingReview),
        (Navigating, EventKind::NavigationDone) => Some(Executing),
        (Executing, EventKind::ExecutionDone) => Some(Done),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SessionError {
    #[error("illegal transition: {event} in state {state}")]
    IllegalTransition { state: SessionState, event: EventKind },
    #[error("unknown session {0}")]
    UnknownSession(SessionId),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewSession {
    pub session_id: SessionId,
    pub cluster: Arc<Cluster>,
    pub state: SessionState,
    pub current_plan: Option<RepairPlan>,
    pub goal: Option<GoalPose>,
    pub exclusions: ExclusionSet,
    /// Number of completed revisions; 0 is the unmodified cluster.
    pub revision: u32,
    pub history: Vec<(f64, Event)>,
}

impl ReviewSession {
    pub fn new(session_id: SessionId, cluster: Arc<Cluster>) -> Self {
        let exclusions = ExclusionSet::empty(cluster.id);
        ReviewSession {
            session_id,
            cluster,
            state: SessionState::Detected,
            current_plan: None,
            goal: None,
            exclusions,
            revision: 0,
            history: Vec::new(),
        }
    }

    /// Applies `event` at `timestamp`. On error the session is unchanged.
    /// Timestamps earlier than the last recorded one are raised to it so the
    /// history stays monotone.
    pub fn advance(&mut self, event: Event, timestamp: f64) -> Result<SessionState, SessionError> {
        let next = transition(self.state, event.kind()).ok_or(SessionError::IllegalTransition {
            state: self.state,
            event: event.kind(),
        })?;
        match &event {
            Event::DetectionReady { plan, goal } => {
                self.current_plan = Some(plan.clone());
                self.goal = *goal;
            }
            Event::ExclusionSubmitted { set } => {
                self.exclusions = ExclusionSet {
                    cluster_id: self.cluster.id,
                    volumes: set.volumes.clone(),
                };
            }
            Event::RevisionReady { plan } => {
                self.current_plan = Some(plan.clone());
                self.revision += 1;
            }
            _ => {}
        }
        let last = self.history.last().map_or(f64::NEG_INFINITY, |(t, _)| *t);
        self.history.push((timestamp.max(last), event));
        self.state = next;
        Ok(next)
    }

    /// True if some Repair decision appears in the history.
    pub fn was_approved(&self) -> bool {
        self.history.iter().any(|(_, e)| {
            matches!(
                e,
                Event::Decision {
                    value: DecisionValue::Repair
                }
            )
        })
    }
}

/// All sessions of one service run, keyed by id.
#[derive(Debug, Default, Clone, PartialEq)]
pub struct SessionStore {
    sessions: BTreeMap<SessionId, ReviewSession>,
}

impl SessionStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, session: ReviewSession) {
        self.sessions.insert(session.session_id, session);
    }

    pub fn get(&self, id: SessionId) -> Result<&ReviewSession, SessionError> {
        self.sessions.get(&id).ok_or(SessionError::UnknownSession(id))
    }

    pub fn advance(
        &mut self,
        id: SessionId,
        event: Event,
        timestamp: f64,
    ) -> Result<SessionState, SessionError> {
        self.sessions
            .get_mut(&id)
            .ok_or(SessionError::UnknownSession(id))?
            .advance(event, timestamp)
    }

    pub fn iter(&self) -> impl Iterator<Item = &ReviewSession> {
        self.sessions.values()
    }

    pub fn len(&self) -> usize {
        self.sessions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sessions.is_empty()
    }
}
