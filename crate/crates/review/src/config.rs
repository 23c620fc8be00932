//! Scenario configuration shared by the CLI and the service: a single JSON
//! object whose field names follow the wire schema conventions.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use star_core::base::RobotFootprint;
use star_core::coverage::{PlannerParams, ReachabilityModel};
use star_core::detection::ClusterParams;
use star_core::pipeline::RobotConfig;
use star_core::{ClusterId, ExclusionSet, Point3};

use crate::protocol::WireVolume;

pub const DEFAULT_PORT: u16 = 8765;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReachSection {
    pub r_min: f64,
    pub r_max: f64,
    /// Radians.
    pub cone_half_angle: f64,
}

impl Default for ReachSection {
    fn default() -> Self {
        let m = ReachabilityModel::default();
        ReachSection {
            r_min: m.r_min,
            r_max: m.r_max,
            cone_half_angle: m.cone_half_angle,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlannerSection {
    pub offset: f64,
    pub spacing: f64,
    pub k: usize,
    pub roll_candidates: usize,
    pub viewpoint: [f64; 3],
    pub reach: ReachSection,
    /// Ignore arm reach: every fixture counts as reachable.
    pub unconstrained: bool,
}

impl Default for PlannerSection {
    fn default() -> Self {
        let p = PlannerParams::default();
        PlannerSection {
            offset: p.offset,
            spacing: p.spacing,
            k: p.k,
            roll_candidates: p.roll_candidates,
            viewpoint: p.viewpoint.to_array(),
            reach: ReachSection::default(),
            unconstrained: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectionSection {
    pub radius: f64,
    pub min_size: usize,
}

impl Default for DetectionSection {
    fn default() -> Self {
        let p = ClusterParams::default();
        DetectionSection {
            radius: p.radius,
            min_size: p.min_size,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RobotSection {
    pub footprint_radius: f64,
    pub standoff: f64,
    pub arm_mount: [f64; 3],
    /// Base start position `[x, y]` for navigation.
    pub start: Option<[f64; 2]>,
}

impl Default for RobotSection {
    fn default() -> Self {
        let r = RobotConfig::default();
        RobotSection {
            footprint_radius: r.footprint.radius,
            standoff: r.standoff,
            arm_mount: r.arm_mount.to_array(),
            start: None,
        }
    }
}

/// Durations of the simulated navigation and execution phases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationSection {
    pub navigation_ms: u64,
    pub execution_ms: u64,
}

impl Default for SimulationSection {
    fn default() -> Self {
        SimulationSection {
            navigation_ms: 500,
            execution_ms: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub port: u16,
    pub host: String,
    /// Static files served next to `/ws` (the browser client).
    pub asset_dir: Option<PathBuf>,
    pub log_dir: PathBuf,
    pub clouds: Vec<PathBuf>,
    pub grid: Option<PathBuf>,
    /// URI sent as `image_uri` in detection notifications.
    pub snapshot_uri: String,
    /// Rebuild sessions from the event logs instead of running detection.
    pub recover: bool,
    pub planner: PlannerSection,
    pub detection: DetectionSection,
    pub robot: RobotSection,
    pub simulation: SimulationSection,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            port: DEFAULT_PORT,
            host: "127.0.0.1".into(),
            asset_dir: None,
            log_dir: PathBuf::from("logs"),
            clouds: Vec::new(),
            grid: None,
            snapshot_uri: "/scene.png".into(),
            recover: false,
            planner: PlannerSection::default(),
            detection: DetectionSection::default(),
            robot: RobotSection::default(),
            simulation: SimulationSection::default(),
        }
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: invalid config: {detail}")]
    Schema { path: PathBuf, detail: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

impl ScenarioConfig {
    /// Reads a config file; relative paths inside it are resolved against
    /// the file's directory. The result is not yet validated.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut config: ScenarioConfig =
            serde_json::from_str(&text).map_err(|e| ConfigError::Schema {
                path: path.to_path_buf(),
                detail: e.to_string(),
            })?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.resolve_paths(base);
        Ok(config)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        self.clouds.iter_mut().for_each(fix);
        self.grid.iter_mut().for_each(fix);
        self.asset_dir.iter_mut().for_each(fix);
        fix(&mut self.log_dir);
    }

    /// Range checks plus existence of the referenced files.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        let p = &self.planner;
        if !(p.offset > 0.0 && p.offset.is_finite()) {
            return bad(format!("planner.offset must be positive, got {}", p.offset));
        }
        if !(p.spacing > 0.0 && p.spacing.is_finite()) {
            return bad(format!("planner.spacing must be positive, got {}", p.spacing));
        }
        if p.k < 3 {
            return bad(format!("planner.k must be at least 3, got {}", p.k));
        }
        if p.roll_candidates == 0 {
            return bad("planner.roll_candidates must be at least 1".into());
        }
        self.planner_params()
            .reach
            .validate()
            .map_err(|e| ConfigError::Invalid(format!("planner.reach: {e}")))?;
        let d = &self.detection;
        if !(d.radius > 0.0 && d.radius.is_finite()) {
            return bad(format!("detection.radius must be positive, got {}", d.radius));
        }
        if d.min_size == 0 {
            return bad("detection.min_size must be at least 1".into());
        }
        let r = &self.robot;
        if !(r.footprint_radius > 0.0 && r.standoff > r.footprint_radius) {
            return bad(format!(
                "robot.standoff ({}) must exceed robot.footprint_radius ({}) > 0",
                r.standoff, r.footprint_radius
            ));
        }
        if self.clouds.is_empty() && !self.recover {
            return bad("clouds must list at least one PCD file".into());
        }
        for path in self.clouds.iter().chain(&self.grid) {
            if !path.is_file() {
                return bad(format!("{}: no such file", path.display()));
            }
        }
        if let Some(dir) = &self.asset_dir {
            if !dir.is_dir() {
                return bad(format!("{}: asset_dir is not a directory", dir.display()));
            }
        }
        Ok(())
    }

    pub fn planner_params(&self) -> PlannerParams {
        let p = &self.planner;
        let viewpoint = Point3::from_array(p.viewpoint);
        let reach = if p.unconstrained {
            ReachabilityModel::unconstrained(Point3::ORIGIN)
        } else {
            ReachabilityModel {
                shoulder: Point3::ORIGIN,
                r_min: p.reach.r_min,
                r_max: p.reach.r_max,
                cone_half_angle: p.reach.cone_half_angle,
            }
        };
        PlannerParams {
            offset: p.offset,
            spacing: p.spacing,
            k: p.k,
            roll_candidates: p.roll_candidates,
            reach,
            viewpoint,
        }
    }

    pub fn cluster_params(&self) -> ClusterParams {
        ClusterParams {
            radius: self.detection.radius,
            min_size: self.detection.min_size,
        }
    }

    pub fn robot_config(&self) -> RobotConfig {
        RobotConfig {
            footprint: RobotFootprint {
                radius: self.robot.footprint_radius,
            },
            standoff: self.robot.standoff,
            arm_mount: Point3::from_array(self.robot.arm_mount),
        }
    }
}

/// Exclusion file: an object with a `volumes` array in wire form. An
/// `exclusions` message parses as one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExclusionFile {
    pub volumes: Vec<WireVolume>,
}

impl ExclusionFile {
    pub fn from_set(set: &ExclusionSet) -> Self {
        ExclusionFile {
            volumes: set.volumes.iter().map(WireVolume::from).collect(),
        }
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|e| ConfigError::Schema {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })
    }

    pub fn to_set(&self, cluster_id: ClusterId) -> Result<ExclusionSet, ConfigError> {
        let volumes = self
            .volumes
            .iter()
            .enumerate()
            .map(|(i, v)| {
                v.to_volume()
                    .map_err(|e| ConfigError::Invalid(format!("volume {i}: {e}")))
            })
            .collect::<Result<_, _>>()?;
        Ok(ExclusionSet { cluster_id, volumes })
    }
}
