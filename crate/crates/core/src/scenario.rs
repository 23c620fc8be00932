//! Synthetic demo scene: a corroded steel plate standing on the floor with a
//! short PVC pipe, ball valve and pressure gauge mounted in front of it.
//!
//! World frame: z up, the plate lies in the plane `x = PLATE_X` facing −x,
//! the robot starts near the origin.

use std::f64::consts::TAU;

use crate::base::OccupancyGrid;
use crate::cloud::{PointCloud, Rgb};
use crate::detection::is_rust_colored;
use crate::exclusion::ExclusionVolume;
use crate::geom::{Point3, Pose, UnitQuaternion};

pub const PLATE_X: f64 = 2.0;
pub const PLATE_HALF_WIDTH: f64 = 0.3;
pub const PLATE_Z: (f64, f64) = (0.3, 0.7);
pub const RESOLUTION: f64 = 0.005;

/// Corroded region on the plate, `(y_min, y_max, z_min, z_max)`.
pub const RUST_PATCH: (f64, f64, f64, f64) = (-0.25, 0.25, 0.33, 0.67);

/// 1" PVC pipe: outer radius in meters.
pub const PIPE_RADIUS: f64 = 0.0127;
pub const PIPE_Y: f64 = 0.08;
pub const PIPE_Z: (f64, f64) = (0.37, 0.63);
/// Gap between the pipe wall and the plate.
pub const PIPE_GAP: f64 = 0.006;
pub const VALVE_Z: f64 = 0.47;
pub const GAUGE_Z: f64 = 0.57;

const STEEL: Rgb = Rgb::new(118, 122, 128);
const PVC: Rgb = Rgb::new(236, 236, 232);
const VALVE: Rgb = Rgb::new(96, 98, 104);
const GAUGE: Rgb = Rgb::new(222, 222, 222);

pub fn pipe_axis_x() -> f64 {
    PLATE_X - PIPE_GAP - PIPE_RADIUS
}

fn rust_shade(i: usize, j: usize) -> Rgb {
    Rgb::new(
        150 + ((i * 7 + j * 3) % 60) as u8,
        58 + ((i * 5 + j * 11) % 30) as u8,
        30 + ((i + 2 * j) % 40) as u8,
    )
}

fn in_rust_patch(y: f64, z: f64) -> bool {
    let (y0, y1, z0, z1) = RUST_PATCH;
    (y0..=y1).contains(&y) && (z0..=z1).contains(&z)
}

/// The plate alone, with the indices of its rust-colored points.
pub fn plate() -> (PointCloud, Vec<usize>) {
    let ny = (2.0 * PLATE_HALF_WIDTH / RESOLUTION).round() as usize + 1;
    let nz = ((PLATE_Z.1 - PLATE_Z.0) / RESOLUTION).round() as usize + 1;
    let mut points = Vec::with_capacity(ny * nz);
    let mut colors = Vec::with_capacity(ny * nz);
    let mut rust = Vec::new();
    for i in 0..ny {
        for j in 0..nz {
            let y = -PLATE_HALF_WIDTH + i as f64 * RESOLUTION;
            let z = PLATE_Z.0 + j as f64 * RESOLUTION;
            points.push(Point3::new(PLATE_X, y, z));
            if in_rust_patch(y, z) {
                rust.push(points.len() - 1);
                colors.push(rust_shade(i, j));
            } else {
                colors.push(STEEL);
            }
        }
    }
    let cloud = PointCloud::with_colors(points, colors)
        .expect("generated cloud is valid")
        .with_frame("world");
    (cloud, rust)
}

/// Pipe, valve and gauge points (none of them rust-colored).
pub fn equipment() -> PointCloud {
    let mut points = Vec::new();
    let mut colors = Vec::new();
    let axis_x = pipe_axis_x();
    // pipe wall
    let around = 24;
    let nz = ((PIPE_Z.1 - PIPE_Z.0) / RESOLUTION).round() as usize + 1;
    for k in 0..around {
        let a = TAU * k as f64 / around as f64;
        for j in 0..nz {
            points.push(Point3::new(
                axis_x + PIPE_RADIUS * a.cos(),
                PIPE_Y + PIPE_RADIUS * a.sin(),
                PIPE_Z.0 + j as f64 * RESOLUTION,
            ));
            colors.push(PVC);
        }
    }
    // valve body: sphere on the pipe axis
    let valve_r = 0.024;
    for lat in 1..12 {
        let polar = std::f64::consts::PI * lat as f64 / 12.0;
        for lon in 0..24 {
            let az = TAU * lon as f64 / 24.0;
            points.push(Point3::new(
                axis_x + valve_r * polar.sin() * az.cos(),
                PIPE_Y + valve_r * polar.sin() * az.sin(),
                VALVE_Z + valve_r * polar.cos(),
            ));
            colors.push(VALVE);
        }
    }
    // gauge face: disk facing the robot
    let gauge_r = 0.03;
    let face_x = axis_x - PIPE_RADIUS - 0.015;
    for ring in 0..=6 {
        let r = gauge_r * ring as f64 / 6.0;
        let count = (ring * 8).max(1);
        for k in 0..count {
            let a = TAU * k as f64 / count as f64;
            points.push(Point3::new(face_x, PIPE_Y + r * a.cos(), GAUGE_Z + r * a.sin()));
            colors.push(GAUGE);
        }
    }
    debug_assert!(colors.iter().all(|&c| !is_rust_colored(c)));
    PointCloud::with_colors(points, colors)
        .expect("generated cloud is valid")
        .with_frame("world")
}

/// Plate followed by equipment, plus the rust-colored indices.
pub fn scene() -> (PointCloud, Vec<usize>) {
    let (plate, rust) = plate();
    (PointCloud::concat(&[plate, equipment()]), rust)
}

/// Box a reviewer would place over the pipe, valve and gauge, with a few
/// centimeters of buffer and a slight roll about the plate normal.
pub fn valve_exclusion() -> ExclusionVolume {
    let pose = Pose::new(
        Point3::new(PLATE_X - 0.03, PIPE_Y, 0.5 * (PIPE_Z.0 + PIPE_Z.1)),
        UnitQuaternion::from_axis_angle(Point3::new(1.0, 0.0, 0.0), 4f64.to_radians())
            .expect("nonzero axis"),
    );
    ExclusionVolume::boxed([0.1, 0.12, 0.34], pose).expect("positive dims")
}

/// Lab floor map: 4 m × 3 m at 5 cm, with the plate cart and a workbench.
pub fn floor_grid() -> OccupancyGrid {
    let mut grid =
        OccupancyGrid::new(80, 60, 0.05, Point3::new(-1.0, -1.5, 0.0)).expect("valid grid");
    // plate cart
    for row in 0..grid.height() {
        for col in 0..grid.width() {
            let c = grid.cell_center(crate::base::Cell::new(row, col));
            let cart = (PLATE_X - 0.05..=PLATE_X + 0.2).contains(&c.x)
                && (-PLATE_HALF_WIDTH - 0.05..=PLATE_HALF_WIDTH + 0.05).contains(&c.y);
            let bench = (0.3..=1.3).contains(&c.x) && (0.9..=1.3).contains(&c.y);
            if cart || bench {
                grid.set_occupied(crate::base::Cell::new(row, col), true);
            }
        }
    }
    grid
}

/// Where the robot waits before navigating to a goal.
pub const ROBOT_START: Point3 = Point3::new(-0.5, -0.8, 0.0);
/// Survey sensor position used to orient normals.
pub const SENSOR_VIEWPOINT: Point3 = Point3::new(0.0, 0.0, 1.0);
