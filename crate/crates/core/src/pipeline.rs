//! Per-cluster preparation shared by the CLI and the review service:
//! normals, base goal pose, arm reach model and the initial repair plan.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::base::{compute_goal_pose, GoalError, GoalPose, OccupancyGrid, RobotFootprint};
use crate::coverage::{
    estimate_normals, replan_after_exclusion, PlanError, PlannerParams, RepairPlan,
};
use crate::detection::Cluster;
use crate::exclusion::ExclusionSet;
use crate::geom::{Point3, Pose, UnitQuaternion};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobotConfig {
    pub footprint: RobotFootprint,
    pub standoff: f64,
    /// Arm shoulder in the base frame (x forward, z up).
    pub arm_mount: Point3,
}

impl Default for RobotConfig {
    fn default() -> Self {
        RobotConfig {
            footprint: RobotFootprint { radius: 0.5 },
            standoff: 0.8,
            arm_mount: Point3::new(0.2, 0.0, 0.6),
        }
    }
}

/// World position of the shoulder when the base sits at `goal`.
pub fn shoulder_at(goal: &GoalPose, arm_mount: Point3) -> Point3 {
    Pose::new(goal.position, UnitQuaternion::from_rotation_z(goal.yaw)).transform_point(arm_mount)
}

#[derive(Debug, Error, PartialEq)]
pub enum PrepareError {
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Goal(#[from] GoalError),
}

/// Everything computed for a freshly detected cluster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreparedCluster {
    pub goal: GoalPose,
    /// Planner parameters with the reach model anchored at the goal pose;
    /// reused for every re-plan of this cluster.
    pub params: PlannerParams,
    pub plan: RepairPlan,
}

/// Computes the base goal pose, anchors the reach model there (unless
/// `fixed_shoulder` pins it) and builds the unmodified plan.
pub fn prepare_cluster(
    cluster: &Cluster,
    grid: &OccupancyGrid,
    robot: &RobotConfig,
    params: &PlannerParams,
    fixed_shoulder: Option<Point3>,
) -> Result<PreparedCluster, PrepareError> {
    let normals = estimate_normals(&cluster.cloud, params.k, params.viewpoint)?;
    let goal = compute_goal_pose(cluster, &normals, robot.footprint, grid, robot.standoff)?;
    let mut params = *params;
    params.reach.shoulder = fixed_shoulder.unwrap_or_else(|| shoulder_at(&goal, robot.arm_mount));
    let (plan, _) = replan_after_exclusion(cluster, &ExclusionSet::empty(cluster.id), &params)?;
    Ok(PreparedCluster { goal, params, plan })
}

/// Empty grid covering the cluster and its standoff ring, for runs without
/// a map.
pub fn open_floor_around(cluster: &Cluster, robot: &RobotConfig) -> OccupancyGrid {
    let margin = robot.standoff + 0.2 + 2.0 * robot.footprint.radius + 1.0;
    let resolution = 0.05;
    let cells = (2.0 * margin / resolution).ceil() as usize;
    OccupancyGrid::new(
        cells,
        cells,
        resolution,
        Point3::new(cluster.centroid.x - margin, cluster.centroid.y - margin, 0.0),
    )
    .expect("positive extent")
}
