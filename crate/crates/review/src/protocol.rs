//! Wire messages exchanged over `/ws`: one JSON object per text frame with a
//! top-level `"type"` discriminator.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use star_core::base::GoalPose;
use star_core::coverage::RepairPlan;
use star_core::exclusion::{Shape, ShapeKind};
use star_core::{ClusterId, ExclusionSet, ExclusionVolume, Point3, PointCloud, Pose, Rgb, UnitQuaternion};

use crate::session::{DecisionValue, SessionId, SessionState};

/// Largest number of points carried by one `cloud` message.
pub const CHUNK_POINTS: usize = 4096;

pub mod codes {
    pub const MALFORMED: &str = "malformed";
    pub const UNKNOWN_TYPE: &str = "unknown_type";
    pub const SCHEMA_VIOLATION: &str = "schema_violation";
    pub const ILLEGAL_TRANSITION: &str = "illegal_transition";
    pub const UNKNOWN_SESSION: &str = "unknown_session";
    pub const EMPTY_AFTER_EXCLUSION: &str = "empty_after_exclusion";
    pub const PLANNING_FAILED: &str = "planning_failed";
    pub const UNEXPECTED_MESSAGE: &str = "unexpected_message";
}

pub const MESSAGE_TYPES: [&str; 8] = [
    "detection",
    "cloud",
    "goal_pose",
    "plan",
    "decision",
    "exclusions",
    "status",
    "error",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WirePose {
    pub position: [f64; 3],
    /// `[w, x, y, z]`
    pub orientation: [f64; 4],
}

impl From<&Pose> for WirePose {
    fn from(p: &Pose) -> Self {
        WirePose {
            position: p.position.to_array(),
            orientation: p.orientation.to_wxyz(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireVolume {
    pub shape: ShapeKind,
    pub pose: WirePose,
    pub dims: Vec<f64>,
}

impl WireVolume {
    pub fn to_volume(&self) -> Result<ExclusionVolume, String> {
        let [w, x, y, z] = self.pose.orientation;
        let q = UnitQuaternion::new(w, x, y, z)
            .ok_or_else(|| "orientation quaternion has zero norm".to_string())?;
        let pose = Pose::new(Point3::from_array(self.pose.position), q);
        let shape = Shape::from_dims(self.shape, &self.dims).map_err(|e| e.to_string())?;
        ExclusionVolume::new(shape, pose).map_err(|e| e.to_string())
    }
}

impl From<&ExclusionVolume> for WireVolume {
    fn from(v: &ExclusionVolume) -> Self {
        WireVolume {
            shape: v.shape().kind(),
            pose: v.pose().into(),
            dims: v.shape().dims(),
        }
    }
}

/// Client-visible phase. `navigating`, `executing` and `done` report
/// execution progress; the remaining values mirror the other session states
/// so clients can gate their controls.
pub type Phase = SessionState;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Message {
    Detection {
        session_id: SessionId,
        cluster_size: usize,
        centroid: [f64; 3],
        image_uri: String,
    },
    Cloud {
        session_id: SessionId,
        revision: u32,
        seq: u32,
        total: u32,
        points: Vec<[f64; 3]>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        colors: Option<Vec<[u8; 3]>>,
    },
    GoalPose {
        session_id: SessionId,
        position: [f64; 3],
        yaw: f64,
    },
    Plan {
        session_id: SessionId,
        revision: u32,
        fixture_count: usize,
        reachable_count: usize,
        coverage_fraction: f64,
        spacing: f64,
        offset: f64,
    },
    Decision {
        session_id: SessionId,
        value: DecisionValue,
    },
    Exclusions {
        session_id: SessionId,
        volumes: Vec<WireVolume>,
    },
    Status {
        session_id: SessionId,
        phase: Phase,
    },
    Error {
        code: String,
        detail: String,
    },
}

impl Message {
    pub fn type_name(&self) -> &'static str {
        match self {
            Message::Detection { .. } => "detection",
            Message::Cloud { .. } => "cloud",
            Message::GoalPose { .. } => "goal_pose",
            Message::Plan { .. } => "plan",
            Message::Decision { .. } => "decision",
            Message::Exclusions { .. } => "exclusions",
            Message::Status { .. } => "status",
            Message::Error { .. } => "error",
        }
    }

    pub fn session_id(&self) -> Option<SessionId> {
        match self {
            Message::Detection { session_id, .. }
            | Message::Cloud { session_id, .. }
            | Message::GoalPose { session_id, .. }
            | Message::Plan { session_id, .. }
            | Message::Decision { session_id, .. }
            | Message::Exclusions { session_id, .. }
            | Message::Status { session_id, .. } => Some(*session_id),
            Message::Error { .. } => None,
        }
    }

    pub fn error(code: &str, detail: impl Into<String>) -> Self {
        Message::Error {
            code: code.to_string(),
            detail: detail.into(),
        }
    }

    pub fn goal(session_id: SessionId, goal: &GoalPose) -> Self {
        Message::GoalPose {
            session_id,
            position: goal.position.to_array(),
            yaw: goal.yaw,
        }
    }

    pub fn plan(session_id: SessionId, revision: u32, plan: &RepairPlan) -> Self {
        Message::Plan {
            session_id,
            revision,
            fixture_count: plan.fixtures.len(),
            reachable_count: plan.reachable_count(),
            coverage_fraction: plan.coverage_fraction,
            spacing: plan.spacing,
            offset: plan.offset,
        }
    }

    pub fn exclusions(session_id: SessionId, set: &ExclusionSet) -> Self {
        Message::Exclusions {
            session_id,
            volumes: set.volumes.iter().map(WireVolume::from).collect(),
        }
    }

    /// Converts an `exclusions` message into a set for `cluster_id`.
    pub fn to_exclusion_set(&self, cluster_id: ClusterId) -> Option<Result<ExclusionSet, String>> {
        let Message::Exclusions { volumes, .. } = self else {
            return None;
        };
        Some(
            volumes
                .iter()
                .map(WireVolume::to_volume)
                .collect::<Result<Vec<_>, _>>()
                .map(|volumes| ExclusionSet { cluster_id, volumes }),
        )
    }

    /// Checks the value ranges serde cannot express.
    pub fn validate(&self) -> Result<(), String> {
        let finite = |vals: &[f64], what: &str| {
            if vals.iter().all(|v| v.is_finite()) {
                Ok(())
            } else {
                Err(format!("{what} must be finite"))
            }
        };
        match self {
            Message::Detection {
                cluster_size,
                centroid,
                ..
            } => {
                finite(centroid, "centroid")?;
                if *cluster_size == 0 {
                    return Err("cluster_size must be positive".into());
                }
            }
            Message::Cloud {
                seq,
                total,
                points,
                colors,
                ..
            } => {
                if *total == 0 || seq >= total {
                    return Err(format!("seq {seq} out of range for total {total}"));
                }
                if points.len() > CHUNK_POINTS {
                    return Err(format!("{} points exceed the chunk limit {CHUNK_POINTS}", points.len()));
                }
                if !points.iter().all(|p| p.iter().all(|v| v.is_finite())) {
                    return Err("points must be finite".into());
                }
                if let Some(c) = colors {
                    if c.len() != points.len() {
                        return Err(format!("{} colors for {} points", c.len(), points.len()));
                    }
                }
            }
            Message::GoalPose { position, yaw, .. } => {
                finite(position, "position")?;
                finite(&[*yaw], "yaw")?;
            }
            Message::Plan {
                fixture_count,
                reachable_count,
                coverage_fraction,
                spacing,
                offset,
                ..
            } => {
                finite(&[*coverage_fraction, *spacing, *offset], "plan values")?;
                if reachable_count > fixture_count {
                    return Err("reachable_count exceeds fixture_count".into());
                }
                if !(0.0..=1.0).contains(coverage_fraction) {
                    return Err("coverage_fraction must lie in [0, 1]".into());
                }
                if *spacing <= 0.0 || *offset <= 0.0 {
                    return Err("spacing and offset must be positive".into());
                }
            }
            Message::Exclusions { volumes, .. } => {
                for (i, v) in volumes.iter().enumerate() {
                    v.to_volume().map_err(|e| format!("volume {i}: {e}"))?;
                }
            }
            Message::Decision { .. } | Message::Status { .. } | Message::Error { .. } => {}
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DecodeError {
    #[error("malformed message: {0}")]
    Malformed(String),
    #[error("unknown message type {0:?}")]
    UnknownType(String),
    #[error("schema violation: {0}")]
    SchemaViolation(String),
}

impl DecodeError {
    pub fn code(&self) -> &'static str {
        match self {
            DecodeError::Malformed(_) => codes::MALFORMED,
            DecodeError::UnknownType(_) => codes::UNKNOWN_TYPE,
            DecodeError::SchemaViolation(_) => codes::SCHEMA_VIOLATION,
        }
    }

    pub fn to_message(&self) -> Message {
        Message::error(self.code(), self.to_string())
    }
}

pub fn encode(msg: &Message) -> String {
    serde_json::to_string(msg).expect("messages always serialize")
}

pub fn decode(bytes: &[u8]) -> Result<Message, DecodeError> {
    let text = std::str::from_utf8(bytes).map_err(|e| DecodeError::Malformed(e.to_string()))?;
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| DecodeError::Malformed(e.to_string()))?;
    let Some(obj) = value.as_object() else {
        return Err(DecodeError::Malformed("expected a JSON object".into()));
    };
    let ty = match obj.get("type") {
        Some(serde_json::Value::String(t)) => t.clone(),
        Some(_) => return Err(DecodeError::Malformed("\"type\" must be a string".into())),
        None => return Err(DecodeError::Malformed("missing \"type\"".into())),
    };
    if !MESSAGE_TYPES.contains(&ty.as_str()) {
        return Err(DecodeError::UnknownType(ty));
    }
    let msg: Message =
        serde_json::from_value(value).map_err(|e| DecodeError::SchemaViolation(e.to_string()))?;
    msg.validate().map_err(DecodeError::SchemaViolation)?;
    Ok(msg)
}

/// Splits a cloud into `cloud` messages of at most [`CHUNK_POINTS`] points.
/// An empty cloud yields a single empty chunk.
pub fn chunk_cloud(session_id: SessionId, revision: u32, cloud: &PointCloud) -> Vec<Message> {
    let n = cloud.len();
    let total = n.div_ceil(CHUNK_POINTS).max(1);
    (0..total)
        .map(|seq| {
            let range = seq * CHUNK_POINTS..((seq + 1) * CHUNK_POINTS).min(n);
            Message::Cloud {
                session_id,
                revision,
                seq: seq as u32,
                total: total as u32,
                points: cloud.points()[range.clone()].iter().map(|p| p.to_array()).collect(),
                colors: cloud
                    .colors()
                    .map(|c| c[range].iter().map(|c| [c.r, c.g, c.b]).collect()),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AssemblyError {
    #[error("expected chunk {expected}, got {got}")]
    OutOfOrder { expected: u32, got: u32 },
    #[error("chunk total changed from {0} to {1}")]
    TotalChanged(u32, u32),
    #[error("colors present in some chunks only")]
    MixedColors,
    #[error("not a cloud message")]
    NotCloud,
}

/// Reassembles `cloud` chunks of one session. A chunk with a new revision
/// discards any partial reassembly; a cloud is returned only once complete.
#[derive(Debug, Default)]
pub struct CloudAssembler {
    revision: Option<u32>,
    total: u32,
    next: u32,
    points: Vec<Point3>,
    colors: Option<Vec<Rgb>>,
}

impl CloudAssembler {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, msg: &Message) -> Result<Option<(u32, PointCloud)>, AssemblyError> {
        let Message::Cloud {
            revision,
            seq,
            total,
            points,
            colors,
            ..
        } = msg
        else {
            return Err(AssemblyError::NotCloud);
        };
        if self.revision != Some(*revision) {
            *self = CloudAssembler {
                revision: Some(*revision),
                total: *total,
                ..Default::default()
            };
        }
        if *total != self.total {
            return Err(AssemblyError::TotalChanged(self.total, *total));
        }
        if *seq != self.next {
            return Err(AssemblyError::OutOfOrder {
                expected: self.next,
                got: *seq,
            });
        }
        match (colors, self.next == 0) {
            (Some(c), true) => self.colors = Some(c.iter().map(|c| Rgb::new(c[0], c[1], c[2])).collect()),
            (Some(c), false) => self
                .colors
                .as_mut()
                .ok_or(AssemblyError::MixedColors)?
                .extend(c.iter().map(|c| Rgb::new(c[0], c[1], c[2]))),
            (None, _) if self.colors.is_some() => return Err(AssemblyError::MixedColors),
            (None, _) => {}
        }
        self.points.extend(points.iter().map(|&p| Point3::from_array(p)));
        self.next += 1;
        if self.next < self.total {
            return Ok(None);
        }
        let points = std::mem::take(&mut self.points);
        let cloud = match self.colors.take() {
            Some(c) => PointCloud::with_colors(points, c).map_err(|_| AssemblyError::MixedColors)?,
            None => PointCloud::new(points),
        };
        let rev = *revision;
        *self = CloudAssembler::default();
        Ok(Some((rev, cloud)))
    }
}
