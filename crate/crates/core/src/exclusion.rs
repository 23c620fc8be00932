//! Reviewer-authored exclusion volumes and the carving of their inliers out
//! of a cloud.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cloud::PointCloud;
use crate::detection::ClusterId;
use crate::geom::{Point3, Pose};

/// Primitive shape with its dimensions, in the volume's local frame.
///
/// Boxes carry full extents. Cylinders are aligned with local z and
/// centered on the origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "lowercase")]
#[non_exhaustive]
pub enum Shape {
    Box { size: [f64; 3] },
    Cylinder { radius: f64, height: f64 },
    Sphere { radius: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
#[non_exhaustive]
pub enum ShapeKind {
    Box,
    Cylinder,
    Sphere,
}

impl ShapeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ShapeKind::Box => "box",
            ShapeKind::Cylinder => "cylinder",
            ShapeKind::Sphere => "sphere",
        }
    }

    pub fn dims_len(self) -> usize {
        match self {
            ShapeKind::Box => 3,
            ShapeKind::Cylinder => 2,
            ShapeKind::Sphere => 1,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum VolumeError {
    #[error("{shape} takes {expected} dims, got {found}")]
    DimsArity {
        shape: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("dimensions must be positive and finite, got {0:?}")]
    NonPositiveDims(Vec<f64>),
    #[error("pose must be finite")]
    NonFinitePose,
}

impl Shape {
    pub fn kind(&self) -> ShapeKind {
        match self {
            Shape::Box { .. } => ShapeKind::Box,
            Shape::Cylinder { .. } => ShapeKind::Cylinder,
            Shape::Sphere { .. } => ShapeKind::Sphere,
        }
    }

    /// Wire-order dims: box `[sx, sy, sz]`, cylinder `[radius, height]`,
    /// sphere `[radius]`.
    pub fn dims(&self) -> Vec<f64> {
        match *self {
            Shape::Box { size } => size.to_vec(),
            Shape::Cylinder { radius, height } => vec![radius, height],
            Shape::Sphere { radius } => vec![radius],
        }
    }

    pub fn from_dims(kind: ShapeKind, dims: &[f64]) -> Result<Shape, VolumeError> {
        if dims.len() != kind.dims_len() {
            return Err(VolumeError::DimsArity {
                shape: kind.as_str(),
                expected: kind.dims_len(),
                found: dims.len(),
            });
        }
        if dims.iter().any(|d| !(*d > 0.0 && d.is_finite())) {
            return Err(VolumeError::NonPositiveDims(dims.to_vec()));
        }
        Ok(match kind {
            ShapeKind::Box => Shape::Box {
                size: [dims[0], dims[1], dims[2]],
            },
            ShapeKind::Cylinder => Shape::Cylinder {
                radius: dims[0],
                height: dims[1],
            },
            ShapeKind::Sphere => Shape::Sphere { radius: dims[0] },
        })
    }

    /// Closed containment test for a point already in the local frame.
    pub fn contains_local(&self, p: Point3) -> bool {
        match *self {
            Shape::Box { size } => {
                p.x.abs() <= 0.5 * size[0] && p.y.abs() <= 0.5 * size[1] && p.z.abs() <= 0.5 * size[2]
            }
            Shape::Cylinder { radius, height } => {
                p.x * p.x + p.y * p.y <= radius * radius && p.z.abs() <= 0.5 * height
            }
            Shape::Sphere { radius } => p.norm_squared() <= radius * radius,
        }
    }
}

/// A posed primitive. Points inside (boundary included) are excluded.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExclusionVolume {
    shape: Shape,
    pose: Pose,
}

impl ExclusionVolume {
    pub fn new(shape: Shape, pose: Pose) -> Result<Self, VolumeError> {
        let checked = Shape::from_dims(shape.kind(), &shape.dims())?;
        let q = pose.orientation;
        if !pose.position.is_finite() || !q.to_wxyz().iter().all(|v| v.is_finite()) {
            return Err(VolumeError::NonFinitePose);
        }
        Ok(ExclusionVolume {
            shape: checked,
            pose,
        })
    }

    pub fn boxed(size: [f64; 3], pose: Pose) -> Result<Self, VolumeError> {
        ExclusionVolume::new(Shape::Box { size }, pose)
    }

    pub fn cylinder(radius: f64, height: f64, pose: Pose) -> Result<Self, VolumeError> {
        ExclusionVolume::new(Shape::Cylinder { radius, height }, pose)
    }

    pub fn sphere(radius: f64, pose: Pose) -> Result<Self, VolumeError> {
        ExclusionVolume::new(Shape::Sphere { radius }, pose)
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn pose(&self) -> &Pose {
        &self.pose
    }

    pub fn contains(&self, p: Point3) -> bool {
        self.shape
            .contains_local(self.pose.inverse_transform_point(p))
    }
}

/// Free-function form of [`ExclusionVolume::contains`].
pub fn contains(volume: &ExclusionVolume, p: Point3) -> bool {
    volume.contains(p)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExclusionSet {
    pub cluster_id: ClusterId,
    pub volumes: Vec<ExclusionVolume>,
}

impl ExclusionSet {
    pub fn empty(cluster_id: ClusterId) -> Self {
        ExclusionSet {
            cluster_id,
            volumes: Vec::new(),
        }
    }

    pub fn contains(&self, p: Point3) -> bool {
        self.volumes.iter().any(|v| v.contains(p))
    }
}

/// Result of carving a cloud: what stays in the plan and what was masked.
#[derive(Debug, Clone, PartialEq)]
pub struct Carved {
    pub retained: PointCloud,
    pub removed: PointCloud,
    pub removed_indices: Vec<usize>,
}

/// Splits `cloud` into points outside every volume and points inside at
/// least one. Input order is kept within each part.
pub fn apply_exclusions(cloud: &PointCloud, set: &ExclusionSet) -> Carved {
    let (removed_indices, retained_indices): (Vec<usize>, Vec<usize>) =
        (0..cloud.len()).partition(|&i| set.contains(cloud.points()[i]));
    Carved {
        retained: cloud.select(&retained_indices),
        removed: cloud.select(&removed_indices),
        removed_indices,
    }
}
