//! Writes the synthetic demo scenario to disk: scene cloud, floor map,
//! valve exclusion and a config tying them together.

use std::path::{Path, PathBuf};

use star_core::cloud::write_pcd_file;
use star_core::{scenario, ClusterId, ExclusionSet};

use crate::config::{ExclusionFile, ScenarioConfig};

pub const SCENE_FILE: &str = "scene.pcd";
pub const GRID_FILE: &str = "floor.grid";
pub const EXCLUSION_FILE: &str = "valve_exclusion.json";
pub const CONFIG_FILE: &str = "config.json";
pub const ASSET_DIR: &str = "assets";
pub const SNAPSHOT_FILE: &str = "scene.png";

#[derive(Debug, Clone)]
pub struct DemoPaths {
    pub scene: PathBuf,
    pub grid: PathBuf,
    pub exclusions: PathBuf,
    pub config: PathBuf,
    pub asset_dir: PathBuf,
}

/// The config written by [`write_demo`], with paths relative to its
/// directory.
pub fn demo_config() -> ScenarioConfig {
    let mut config = ScenarioConfig {
        clouds: vec![PathBuf::from(SCENE_FILE)],
        grid: Some(PathBuf::from(GRID_FILE)),
        asset_dir: Some(PathBuf::from(ASSET_DIR)),
        log_dir: PathBuf::from("logs"),
        snapshot_uri: format!("/{SNAPSHOT_FILE}"),
        ..Default::default()
    };
    config.robot.start = Some([scenario::ROBOT_START.x, scenario::ROBOT_START.y]);
    config.planner.viewpoint = scenario::SENSOR_VIEWPOINT.to_array();
    config
}

pub fn write_demo(dir: &Path) -> std::io::Result<DemoPaths> {
    let to_io = |e: star_core::cloud::PcdFileError| std::io::Error::other(e.to_string());
    std::fs::create_dir_all(dir)?;
    let paths = DemoPaths {
        scene: dir.join(SCENE_FILE),
        grid: dir.join(GRID_FILE),
        exclusions: dir.join(EXCLUSION_FILE),
        config: dir.join(CONFIG_FILE),
        asset_dir: dir.join(ASSET_DIR),
    };
    let (scene, _) = scenario::scene();
    write_pcd_file(&paths.scene, &scene).map_err(to_io)?;
    std::fs::write(&paths.grid, scenario::floor_grid().to_text())?;
    let set = ExclusionSet {
        cluster_id: ClusterId(1),
        volumes: vec![scenario::valve_exclusion()],
    };
    let json = serde_json::to_string_pretty(&ExclusionFile::from_set(&set)).expect("serializable");
    std::fs::write(&paths.exclusions, json + "\n")?;
    let json = serde_json::to_string_pretty(&demo_config()).expect("serializable");
    std::fs::write(&paths.config, json + "\n")?;
    std::fs::create_dir_all(&paths.asset_dir)?;
    Ok(paths)
}
