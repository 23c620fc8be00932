//! Scenario loading and per-cluster preparation, independent of transport.

use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use thiserror::Error;

use star_core::base::{GoalPose, GridError, OccupancyGrid};
use star_core::cloud::{read_pcd_file, PcdFileError};
use star_core::coverage::{replan_after_exclusion, PlannerParams, RepairPlan};
use star_core::detection::{detect_clusters, DetectionError};
use star_core::pipeline::{open_floor_around, prepare_cluster, shoulder_at, PrepareError};
use star_core::{Cluster, ExclusionSet, PointCloud};

use crate::config::ScenarioConfig;
use crate::session::{Event, ReviewSession};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Cloud(#[from] PcdFileError),
    #[error("{path}: {source}")]
    Grid {
        path: std::path::PathBuf,
        #[source]
        source: GridError,
    },
    #[error("{path}: {source}")]
    GridIo {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("detection failed: {0}")]
    Detection(#[from] DetectionError),
}

/// Seconds since the Unix epoch.
pub fn now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

pub fn load_grid(path: &std::path::Path) -> Result<OccupancyGrid, EngineError> {
    let text = std::fs::read_to_string(path).map_err(|source| EngineError::GridIo {
        path: path.to_path_buf(),
        source,
    })?;
    OccupancyGrid::parse(&text).map_err(|source| EngineError::Grid {
        path: path.to_path_buf(),
        source,
    })
}

/// Concatenation of all configured clouds, in order.
pub fn load_scene(config: &ScenarioConfig) -> Result<PointCloud, EngineError> {
    let clouds = config
        .clouds
        .iter()
        .map(read_pcd_file)
        .collect::<Result<Vec<_>, _>>()?;
    Ok(PointCloud::concat(&clouds))
}

/// Planner parameters for a session: the configured ones with the reach
/// model anchored at the goal's shoulder position when there is a goal.
pub fn session_params(config: &ScenarioConfig, goal: Option<&GoalPose>) -> PlannerParams {
    let mut params = config.planner_params();
    if let (Some(goal), false) = (goal, config.planner.unconstrained) {
        params.reach.shoulder = shoulder_at(goal, config.robot_config().arm_mount);
    }
    params
}

/// Goal and initial plan for one cluster. A cluster with no collision-free
/// base pose still gets a plan (reach model at the configured shoulder) so
/// the reviewer can look at it; a cluster that cannot be planned gets an
/// empty plan.
pub fn prepare(
    cluster: &Cluster,
    grid: Option<&OccupancyGrid>,
    config: &ScenarioConfig,
) -> (Option<GoalPose>, RepairPlan) {
    let robot = config.robot_config();
    let open;
    let grid = match grid {
        Some(g) => g,
        None => {
            open = open_floor_around(cluster, &robot);
            &open
        }
    };
    let params = session_params(config, None);
    match prepare_cluster(cluster, grid, &robot, &params, None) {
        Ok(p) => (Some(p.goal), p.plan),
        Err(PrepareError::Goal(e)) => {
            log::warn!("cluster {}: no base goal pose: {e}", cluster.id);
            let plan = replan_after_exclusion(cluster, &ExclusionSet::empty(cluster.id), &params)
                .map(|(plan, _)| plan)
                .unwrap_or_else(|e| {
                    log::warn!("cluster {}: planning failed: {e}", cluster.id);
                    RepairPlan::empty(cluster.id, params.spacing, params.offset)
                });
            (None, plan)
        }
        Err(PrepareError::Plan(e)) => {
            log::warn!("cluster {}: planning failed: {e}", cluster.id);
            (None, RepairPlan::empty(cluster.id, params.spacing, params.offset))
        }
    }
}

/// Detects clusters in `scene` and opens one session per cluster, already
/// advanced to AwaitingReview. Session ids equal cluster ids, starting at 1.
pub fn open_sessions(
    scene: &PointCloud,
    grid: Option<&OccupancyGrid>,
    config: &ScenarioConfig,
) -> Result<Vec<ReviewSession>, EngineError> {
    let clusters = detect_clusters(scene, config.cluster_params(), 1)?;
    Ok(clusters
        .into_iter()
        .map(|cluster| {
            let (goal, plan) = prepare(&cluster, grid, config);
            let mut session = ReviewSession::new(cluster.id.0 as u64, Arc::new(cluster));
            session
                .advance(Event::DetectionReady { plan, goal }, now())
                .expect("fresh sessions accept DetectionReady");
            session
        })
        .collect())
}
