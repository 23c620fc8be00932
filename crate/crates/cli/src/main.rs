//! `star`: detection, planning, navigation and the review service from the
//! command line.
//!
//! Exit codes: 0 success, 1 I/O, parse or config error, 2 empty plan after
//! exclusion, 3 no navigation path.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use star_core::base::{dijkstra_path, render_path, Cell, PathError};
use star_core::cloud::{read_pcd_file, write_pcd_file};
use star_core::coverage::{replan_after_exclusion, PlanError};
use star_core::detection::{detect_clusters, ClusterId};
use star_core::{Cluster, ExclusionSet, PointCloud};
use star_review::client::scripted_review;
use star_review::config::{ExclusionFile, ScenarioConfig, DEFAULT_PORT};
use star_review::demo::{write_demo, SNAPSHOT_FILE};
use star_review::engine::{load_grid, prepare, session_params};
use star_review::log::replay_dir;

mod snapshot;

#[derive(Parser)]
#[command(name = "star", version, about = "Corrosion review and repair planning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Find corroded clusters in a cloud and write one PCD per cluster.
    Detect {
        #[arg(long)]
        cloud: PathBuf,
        /// Directory for cluster_<id>.pcd files.
        #[arg(long, default_value = ".")]
        out: PathBuf,
        #[command(flatten)]
        params: ParamArgs,
    },
    /// Plan fixtures for one cluster cloud and write them as CSV.
    Plan {
        /// Cluster cloud, e.g. a cluster_<id>.pcd written by `detect`.
        #[arg(long)]
        cloud: PathBuf,
        /// JSON file with a `volumes` array in wire form.
        #[arg(long)]
        exclusions: Option<PathBuf>,
        /// Occupancy grid used to place the base; open floor if omitted.
        #[arg(long)]
        grid: Option<PathBuf>,
        /// Ignore arm reach: every fixture counts as reachable.
        #[arg(long)]
        unconstrained: bool,
        #[arg(long, default_value = "fixtures.csv")]
        out: PathBuf,
        #[command(flatten)]
        params: ParamArgs,
    },
    /// Shortest 8-connected path between two grid cells.
    Navigate {
        #[arg(long)]
        grid: PathBuf,
        /// Start cell as `row,col`.
        #[arg(long, value_parser = parse_cell)]
        start: Cell,
        /// Goal cell as `row,col`.
        #[arg(long, value_parser = parse_cell)]
        goal: Cell,
    },
    /// Run the review service until interrupted.
    Serve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, env = "STAR_PORT")]
        port: Option<u16>,
        /// Scene cloud; replaces the config's list when given.
        #[arg(long)]
        cloud: Vec<PathBuf>,
        #[arg(long)]
        grid: Option<PathBuf>,
        /// Rebuild sessions from the event logs.
        #[arg(long)]
        recover: bool,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Write the synthetic demo scenario (cloud, map, valve exclusion,
    /// config, snapshot image).
    DemoAssets {
        #[arg(long, default_value = "demo")]
        out: PathBuf,
    },
    /// Act as a reviewer against a running service: optionally modify with
    /// an exclusion file, then approve and wait for completion.
    Review {
        #[arg(long, default_value_t = format!("ws://127.0.0.1:{DEFAULT_PORT}/ws"))]
        url: String,
        #[arg(long)]
        session: Option<u64>,
        #[arg(long)]
        exclusions: Option<PathBuf>,
    },
    /// Print the sessions rebuilt from a log directory.
    Replay {
        #[arg(long)]
        log_dir: PathBuf,
    },
}

/// `--config` plus the overrides.
#[derive(Args, Clone, Default)]
struct ParamArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
}

impl ParamArgs {
    /// Config from `--config` (or defaults) with the flags applied.
    fn config(&self) -> anyhow::Result<ScenarioConfig> {
        let config = match &self.config {
            Some(path) => ScenarioConfig::load(path)?,
            None => ScenarioConfig::default(),
        };
        Ok(self.overrides.apply(config))
    }
}

/// Planner and detection flags; they win over the config file.
#[derive(Args, Clone, Default)]
struct Overrides {
    #[arg(long)]
    spacing: Option<f64>,
    #[arg(long)]
    offset: Option<f64>,
    #[arg(long)]
    radius: Option<f64>,
    #[arg(long)]
    min_size: Option<usize>,
    #[arg(long)]
    standoff: Option<f64>,
}

impl Overrides {
    fn apply(&self, mut config: ScenarioConfig) -> ScenarioConfig {
        let c = &mut config;
        self.spacing.inspect(|&v| c.planner.spacing = v);
        self.offset.inspect(|&v| c.planner.offset = v);
        self.radius.inspect(|&v| c.detection.radius = v);
        self.min_size.inspect(|&v| c.detection.min_size = v);
        self.standoff.inspect(|&v| c.robot.standoff = v);
        config
    }
}

fn parse_cell(s: &str) -> Result<Cell, String> {
    let (r, c) = s
        .split_once(',')
        .ok_or_else(|| format!("expected row,col, got {s:?}"))?;
    let num = |t: &str| t.trim().parse::<usize>().map_err(|e| format!("{t:?}: {e}"));
    Ok(Cell::new(num(r)?, num(c)?))
}

/// An error with the exit code it maps to.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure {
            code: 1,
            error: e.into(),
        }
    }
}

fn fail(code: u8, error: anyhow::Error) -> Failure {
    Failure { code, error }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Detect { cloud, out, params } => detect(&cloud, &out, &params),
        Command::Plan {
            cloud,
            exclusions,
            grid,
            unconstrained,
            out,
            params,
        } => plan(&cloud, exclusions.as_deref(), grid.as_deref(), unconstrained, &out, &params),
        Command::Navigate { grid, start, goal } => navigate(&grid, start, goal),
        Command::Serve {
            config,
            port,
            cloud,
            grid,
            recover,
            overrides,
        } => {
            let mut cfg = overrides.apply(ScenarioConfig::load(&config)?);
            if let Some(p) = port {
                cfg.port = p;
            }
            if !cloud.is_empty() {
                cfg.clouds = cloud;
            }
            if grid.is_some() {
                cfg.grid = grid;
            }
            cfg.recover |= recover;
            runtime()?.block_on(star_review::service::serve(cfg))?;
            Ok(())
        }
        Command::DemoAssets { out } => demo_assets(&out),
        Command::Review {
            url,
            session,
            exclusions,
        } => review(&url, session, exclusions.as_deref()),
        Command::Replay { log_dir } => {
            for s in replay_dir(&log_dir)? {
                let plan = s.current_plan.as_ref();
                println!(
                    "session {}: {} ({} events, revision {}, {} fixtures)",
                    s.session_id,
                    s.state,
                    s.history.len(),
                    s.revision,
                    plan.map_or(0, |p| p.fixtures.len())
                );
            }
            Ok(())
        }
    }
}

fn runtime() -> anyhow::Result<tokio::runtime::Runtime> {
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .context("starting the async runtime")
}

fn detect(cloud_path: &Path, out: &Path, params: &ParamArgs) -> Result<(), Failure> {
    let config = params.config()?;
    let cloud = read_pcd_file(cloud_path)?;
    let clusters = if cloud.is_empty() {
        Vec::new()
    } else {
        detect_clusters(&cloud, config.cluster_params(), 1)
            .with_context(|| format!("{}", cloud_path.display()))?
    };
    println!("{} clusters", clusters.len());
    if !clusters.is_empty() {
        std::fs::create_dir_all(out).with_context(|| format!("{}", out.display()))?;
    }
    for c in &clusters {
        let path = out.join(format!("cluster_{}.pcd", c.id));
        write_pcd_file(&path, &c.cloud)?;
        let p = c.centroid;
        println!(
            "cluster {}: {} points, centroid ({:.5}, {:.5}, {:.5}) -> {}",
            c.id,
            c.len(),
            p.x,
            p.y,
            p.z,
            path.display()
        );
    }
    Ok(())
}

#[derive(Serialize)]
struct FixtureRow {
    x: f64,
    y: f64,
    z: f64,
    qw: f64,
    qx: f64,
    qy: f64,
    qz: f64,
    reachable: bool,
}

fn plan(
    cloud_path: &Path,
    exclusions: Option<&Path>,
    grid: Option<&Path>,
    unconstrained: bool,
    out: &Path,
    params: &ParamArgs,
) -> Result<(), Failure> {
    let mut config = params.config()?;
    config.planner.unconstrained |= unconstrained;
    let cloud: PointCloud = read_pcd_file(cloud_path)?;
    let id = ClusterId(1);
    let cluster = Cluster::new(id, cloud)
        .ok_or_else(|| fail(2, anyhow!("{}: cluster cloud is empty", cloud_path.display())))?;
    let set = match exclusions {
        Some(path) => ExclusionFile::load(path)?.to_set(id)?,
        None => ExclusionSet::empty(id),
    };
    let grid = grid.map(load_grid).transpose()?;
    let (goal, _) = prepare(&cluster, grid.as_ref(), &config);
    let params = session_params(&config, goal.as_ref());
    let (plan, retained) = match replan_after_exclusion(&cluster, &set, &params) {
        Ok(r) => r,
        Err(e @ PlanError::EmptyAfterExclusion(_)) => return Err(fail(2, e.into())),
        Err(e) => return Err(e.into()),
    };
    if let Some(g) = goal {
        println!(
            "goal_pose {:.5} {:.5} yaw {:.5}",
            g.position.x, g.position.y, g.yaw
        );
    }
    println!("retained_points {}", retained.len());
    println!("fixture_count {}", plan.fixtures.len());
    println!("reachable_count {}", plan.reachable_count());
    println!("coverage_fraction {:.6}", plan.coverage_fraction);

    let mut writer = csv_writer(out)?;
    for f in &plan.fixtures {
        let [qw, qx, qy, qz] = f.pose.orientation.to_wxyz();
        let p = f.pose.position;
        writer.serialize(FixtureRow {
            x: p.x,
            y: p.y,
            z: p.z,
            qw,
            qx,
            qy,
            qz,
            reachable: f.reachable,
        })?;
    }
    writer.flush().with_context(|| format!("{}", out.display()))?;
    println!("fixtures written to {}", out.display());
    Ok(())
}

fn csv_writer(path: &Path) -> anyhow::Result<csv::Writer<std::fs::File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("{}", dir.display()))?;
    }
    csv::Writer::from_path(path).with_context(|| format!("{}", path.display()))
}

fn navigate(grid_path: &Path, start: Cell, goal: Cell) -> Result<(), Failure> {
    let grid = load_grid(grid_path)?;
    let path = match dijkstra_path(&grid, start, goal) {
        Ok(p) => p,
        Err(e @ PathError::NoPath(..)) => return Err(fail(3, e.into())),
        Err(e) => return Err(e.into()),
    };
    println!("cost {:.5}", path.cost);
    println!("length_m {:.5}", path.cost * grid.resolution());
    let cells: Vec<String> = path.cells.iter().map(|c| c.to_string()).collect();
    println!("path {}", cells.join(" "));
    print!("{}", render_path(&grid, &path));
    Ok(())
}

fn demo_assets(out: &Path) -> Result<(), Failure> {
    let paths = write_demo(out).with_context(|| format!("{}", out.display()))?;
    let (scene, _) = star_core::scenario::scene();
    let image_path = paths.asset_dir.join(SNAPSHOT_FILE);
    snapshot::render(&scene)
        .save(&image_path)
        .with_context(|| format!("{}", image_path.display()))?;
    for p in [&paths.scene, &paths.grid, &paths.exclusions, &paths.config, &image_path] {
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn review(url: &str, session: Option<u64>, exclusions: Option<&Path>) -> Result<(), Failure> {
    let volumes = exclusions
        .map(|p| ExclusionFile::load(p).map(|f| f.volumes))
        .transpose()?;
    let outcome = runtime()?.block_on(scripted_review(url, session, volumes))?;
    println!("session {}", outcome.session_id);
    for phase in &outcome.phases {
        println!("status {phase}");
    }
    if let Some((revision, cloud)) = &outcome.cloud {
        println!("cloud revision {revision}: {} points", cloud.len());
    }
    if outcome.phases.last() != Some(&star_review::SessionState::Done) {
        return Err(anyhow!("review did not reach done").into());
    }
    Ok(())
}
