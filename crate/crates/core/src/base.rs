//! Mobile base placement and grid navigation.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::f64::consts::{PI, SQRT_2};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coverage::SurfaceNormals;
use crate::detection::{Cluster, ClusterId};
use crate::geom::Point3;

/// Row/column address of a grid cell. Row follows world y, column world x.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    pub row: usize,
    pub col: usize,
}

impl Cell {
    pub const fn new(row: usize, col: usize) -> Self {
        Cell { row, col }
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.row, self.col)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum GridError {
    #[error("grid text: {0}")]
    Parse(String),
    #[error("grid must be at least 1x1 with positive resolution")]
    InvalidShape,
}

/// Boolean occupancy map. `origin` is the world position of the outer
/// corner of cell (0, 0); cell centers sit at `origin + (col + ½, row + ½)·res`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupancyGrid {
    width: usize,
    height: usize,
    resolution: f64,
    origin: Point3,
    occupied: Vec<bool>,
}

impl OccupancyGrid {
    pub fn new(width: usize, height: usize, resolution: f64, origin: Point3) -> Result<Self, GridError> {
        if width == 0 || height == 0 || !(resolution > 0.0 && resolution.is_finite()) || !origin.is_finite() {
            return Err(GridError::InvalidShape);
        }
        Ok(OccupancyGrid {
            width,
            height,
            resolution,
            origin,
            occupied: vec![false; width * height],
        })
    }

    /// Parses `"W H resolution [origin_x origin_y]"` followed by `H` rows of
    /// `W` characters, `.` free and `#` occupied. Text row `i` is grid row `i`.
    pub fn parse(text: &str) -> Result<Self, GridError> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| GridError::Parse("empty file".into()))?;
        let tokens: Vec<&str> = header.split_whitespace().collect();
        if tokens.len() != 3 && tokens.len() != 5 {
            return Err(GridError::Parse(format!("bad header {header:?}")));
        }
        let bad = |what: &str| GridError::Parse(format!("bad {what} in header {header:?}"));
        let width: usize = tokens[0].parse().map_err(|_| bad("width"))?;
        let height: usize = tokens[1].parse().map_err(|_| bad("height"))?;
        let resolution: f64 = tokens[2].parse().map_err(|_| bad("resolution"))?;
        let origin = if tokens.len() == 5 {
            Point3::new(
                tokens[3].parse().map_err(|_| bad("origin"))?,
                tokens[4].parse().map_err(|_| bad("origin"))?,
                0.0,
            )
        } else {
            Point3::ORIGIN
        };
        let mut grid = OccupancyGrid::new(width, height, resolution, origin)?;
        let mut rows = 0;
        for (row, line) in lines.enumerate() {
            if row >= height {
                return Err(GridError::Parse(format!("more than {height} rows")));
            }
            let line = line.trim_end();
            if line.chars().count() != width {
                return Err(GridError::Parse(format!("row {row} is not {width} wide")));
            }
            for (col, ch) in line.chars().enumerate() {
                match ch {
                    '.' => {}
                    '#' => grid.set_occupied(Cell::new(row, col), true),
                    other => return Err(GridError::Parse(format!("unexpected {other:?} in row {row}"))),
                }
            }
            rows += 1;
        }
        if rows != height {
            return Err(GridError::Parse(format!("expected {height} rows, found {rows}")));
        }
        Ok(grid)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "{} {} {} {} {}\n",
            self.width, self.height, self.resolution, self.origin.x, self.origin.y
        );
        for row in 0..self.height {
            for col in 0..self.width {
                out.push(if self.is_occupied(Cell::new(row, col)) { '#' } else { '.' });
            }
            out.push('\n');
        }
        out
    }

    pub fn width(&self) -> usize {
        self.width
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn resolution(&self) -> f64 {
        self.resolution
    }
    pub fn origin(&self) -> Point3 {
        self.origin
    }

    pub fn in_bounds(&self, cell: Cell) -> bool {
        cell.row < self.height && cell.col < self.width
    }

    pub fn is_occupied(&self, cell: Cell) -> bool {
        self.occupied[cell.row * self.width + cell.col]
    }

    pub fn set_occupied(&mut self, cell: Cell, occupied: bool) {
        self.occupied[cell.row * self.width + cell.col] = occupied;
    }

    pub fn fill(&mut self, occupied: bool) {
        self.occupied.iter_mut().for_each(|c| *c = occupied);
    }

    pub fn cell_center(&self, cell: Cell) -> Point3 {
        Point3::new(
            self.origin.x + (cell.col as f64 + 0.5) * self.resolution,
            self.origin.y + (cell.row as f64 + 0.5) * self.resolution,
            0.0,
        )
    }

    /// Cell containing a world position, if inside the grid.
    pub fn cell_at(&self, p: Point3) -> Option<Cell> {
        let col = ((p.x - self.origin.x) / self.resolution).floor();
        let row = ((p.y - self.origin.y) / self.resolution).floor();
        if col < 0.0 || row < 0.0 {
            return None;
        }
        let cell = Cell::new(row as usize, col as usize);
        self.in_bounds(cell).then_some(cell)
    }

    /// Marks every cell whose center lies within `radius` of `center`.
    pub fn occupy_disk(&mut self, center: Point3, radius: f64) {
        for cell in self.cells_in_disk(center, radius) {
            self.set_occupied(cell, true);
        }
    }

    /// Cells whose centers are within `radius` of `center` (z ignored).
    pub fn cells_in_disk(&self, center: Point3, radius: f64) -> Vec<Cell> {
        let mut out = Vec::new();
        let lo_col = ((center.x - radius - self.origin.x) / self.resolution).floor().max(0.0) as usize;
        let lo_row = ((center.y - radius - self.origin.y) / self.resolution).floor().max(0.0) as usize;
        let hi_col = ((center.x + radius - self.origin.x) / self.resolution).ceil();
        let hi_row = ((center.y + radius - self.origin.y) / self.resolution).ceil();
        if hi_col < 0.0 || hi_row < 0.0 {
            return out;
        }
        let hi_col = (hi_col as usize).min(self.width - 1);
        let hi_row = (hi_row as usize).min(self.height - 1);
        for row in lo_row..=hi_row {
            for col in lo_col..=hi_col {
                let cell = Cell::new(row, col);
                let c = self.cell_center(cell);
                let (dx, dy) = (c.x - center.x, c.y - center.y);
                if dx * dx + dy * dy <= radius * radius {
                    out.push(cell);
                }
            }
        }
        out
    }

    /// True when the disk lies inside the grid extent and no occupied cell
    /// center falls within it.
    pub fn disk_is_free(&self, center: Point3, radius: f64) -> bool {
        let max_x = self.origin.x + self.width as f64 * self.resolution;
        let max_y = self.origin.y + self.height as f64 * self.resolution;
        if center.x - radius < self.origin.x
            || center.y - radius < self.origin.y
            || center.x + radius > max_x
            || center.y + radius > max_y
        {
            return false;
        }
        self.cells_in_disk(center, radius)
            .into_iter()
            .all(|c| !self.is_occupied(c))
    }
}

/// Planar base target: position on the floor and heading.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GoalPose {
    pub position: Point3,
    pub yaw: f64,
    pub cluster_id: ClusterId,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobotFootprint {
    pub radius: f64,
}

#[derive(Debug, Error, PartialEq)]
pub enum GoalError {
    #[error("no collision-free base pose among the candidates")]
    NoValidPose,
    #[error("mean surface normal is vertical; no horizontal approach direction")]
    DegenerateNormal,
    #[error("standoff {standoff} must exceed footprint radius {radius}")]
    StandoffTooSmall { standoff: f64, radius: f64 },
}

/// Wraps an angle into `(−π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    }
    w
}

/// Standoff offsets tried, in order.
pub const STANDOFF_DELTAS: [f64; 5] = [0.0, 0.1, -0.1, 0.2, -0.2];
/// Bearing offsets tried for each standoff, in order (degrees).
pub const BEARING_DEGREES: [f64; 7] = [0.0, 15.0, -15.0, 30.0, -30.0, 45.0, -45.0];

/// Candidate base positions in search order: distance-major, bearing
/// symmetric outward from the mean surface normal. Candidates with a
/// non-positive distance are skipped.
pub fn goal_candidates(center: Point3, direction_xy: Point3, standoff: f64) -> Vec<Point3> {
    let mut out = Vec::new();
    for dd in STANDOFF_DELTAS {
        let d = standoff + dd;
        if d <= 0.0 {
            continue;
        }
        for deg in BEARING_DEGREES {
            let (s, c) = deg.to_radians().sin_cos();
            let dir = Point3::new(
                c * direction_xy.x - s * direction_xy.y,
                s * direction_xy.x + c * direction_xy.y,
                0.0,
            );
            out.push(Point3::new(center.x + d * dir.x, center.y + d * dir.y, 0.0));
        }
    }
    out
}

/// First candidate base pose whose footprint is collision-free, facing the
/// cluster centroid.
pub fn compute_goal_pose(
    cluster: &Cluster,
    normals: &SurfaceNormals,
    footprint: RobotFootprint,
    grid: &OccupancyGrid,
    standoff: f64,
) -> Result<GoalPose, GoalError> {
    if !(standoff > footprint.radius) {
        return Err(GoalError::StandoffTooSmall {
            standoff,
            radius: footprint.radius,
        });
    }
    let mean = normals.mean().ok_or(GoalError::DegenerateNormal)?;
    let xy = Point3::new(mean.x, mean.y, 0.0);
    if xy.norm() < 1e-6 {
        return Err(GoalError::DegenerateNormal);
    }
    let direction = xy * (1.0 / xy.norm());
    let center = Point3::new(cluster.centroid.x, cluster.centroid.y, 0.0);
    goal_candidates(center, direction, standoff)
        .into_iter()
        .find(|&p| grid.disk_is_free(p, footprint.radius))
        .map(|p| GoalPose {
            position: p,
            yaw: wrap_angle((center.y - p.y).atan2(center.x - p.x)),
            cluster_id: cluster.id,
        })
        .ok_or(GoalError::NoValidPose)
}

#[derive(Debug, Error, PartialEq)]
pub enum PathError {
    #[error("cell {0} is outside the grid")]
    OutOfBounds(Cell),
    #[error("cell {0} is occupied")]
    CellOccupied(Cell),
    #[error("no path from {0} to {1}")]
    NoPath(Cell, Cell),
}

/// Path length as `orthogonal + diagonal·√2`, compared exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct StepCost {
    pub orthogonal: u64,
    pub diagonal: u64,
}

impl StepCost {
    pub fn value(self) -> f64 {
        self.orthogonal as f64 + self.diagonal as f64 * SQRT_2
    }
}

impl Ord for StepCost {
    fn cmp(&self, other: &Self) -> Ordering {
        // compare a1 + b1√2 with a2 + b2√2 via (a1 − a2) vs (b2 − b1)√2
        let a = self.orthogonal as i128 - other.orthogonal as i128;
        let b = other.diagonal as i128 - self.diagonal as i128;
        // sign of a − b√2
        match (a.signum(), b.signum()) {
            (0, 0) => Ordering::Equal,
            (sa, sb) if sa >= 0 && sb <= 0 => Ordering::Greater,
            (sa, sb) if sa <= 0 && sb >= 0 => Ordering::Less,
            (1, 1) => (a * a).cmp(&(2 * b * b)),
            _ => (2 * b * b).cmp(&(a * a)),
        }
    }
}

impl PartialOrd for StepCost {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridPath {
    pub cells: Vec<Cell>,
    pub cost: f64,
    pub steps: StepCost,
}

const NEIGHBORS: [(isize, isize); 8] = [
    (-1, -1),
    (-1, 0),
    (-1, 1),
    (0, -1),
    (0, 1),
    (1, -1),
    (1, 0),
    (1, 1),
];

/// Grid moves available from `cell`: 8-connected, no corner cutting.
pub fn moves(grid: &OccupancyGrid, cell: Cell) -> impl Iterator<Item = (Cell, bool)> + '_ {
    NEIGHBORS.iter().filter_map(move |&(dr, dc)| {
        let r = cell.row as isize + dr;
        let c = cell.col as isize + dc;
        if r < 0 || c < 0 {
            return None;
        }
        let next = Cell::new(r as usize, c as usize);
        if !grid.in_bounds(next) || grid.is_occupied(next) {
            return None;
        }
        let diagonal = dr != 0 && dc != 0;
        if diagonal
            && (grid.is_occupied(Cell::new(r as usize, cell.col))
                || grid.is_occupied(Cell::new(cell.row, c as usize)))
        {
            return None;
        }
        Some((next, diagonal))
    })
}

/// Minimum-cost 8-connected path (orthogonal step 1, diagonal √2).
///
/// Among equal-cost paths, each cell's predecessor is the lexicographically
/// smallest `(row, col)` optimal predecessor.
pub fn dijkstra_path(grid: &OccupancyGrid, start: Cell, goal: Cell) -> Result<GridPath, PathError> {
    for c in [start, goal] {
        if !grid.in_bounds(c) {
            return Err(PathError::OutOfBounds(c));
        }
        if grid.is_occupied(c) {
            return Err(PathError::CellOccupied(c));
        }
    }
    let idx = |c: Cell| c.row * grid.width + c.col;
    let n = grid.width * grid.height;
    let mut dist: Vec<Option<StepCost>> = vec![None; n];
    let mut pred: Vec<Option<Cell>> = vec![None; n];
    let mut done = vec![false; n];
    let mut heap = BinaryHeap::new();
    dist[idx(start)] = Some(StepCost::default());
    heap.push(std::cmp::Reverse((StepCost::default(), start)));

    while let Some(std::cmp::Reverse((d, cell))) = heap.pop() {
        if done[idx(cell)] {
            continue;
        }
        done[idx(cell)] = true;
        if cell == goal {
            break;
        }
        for (next, diagonal) in moves(grid, cell) {
            let i = idx(next);
            if done[i] {
                continue;
            }
            let mut nd = d;
            if diagonal {
                nd.diagonal += 1;
            } else {
                nd.orthogonal += 1;
            }
            let better = match dist[i] {
                None => true,
                Some(cur) => nd < cur || (nd == cur && pred[i].is_some_and(|p| cell < p)),
            };
            if better {
                let improved = dist[i] != Some(nd);
                dist[i] = Some(nd);
                pred[i] = Some(cell);
                if improved {
                    heap.push(std::cmp::Reverse((nd, next)));
                }
            }
        }
    }

    let steps = dist[idx(goal)].ok_or(PathError::NoPath(start, goal))?;
    let mut cells = vec![goal];
    let mut cur = goal;
    while cur != start {
        cur = pred[idx(cur)].expect("reached cells have predecessors");
        cells.push(cur);
    }
    cells.reverse();
    Ok(GridPath {
        cells,
        cost: steps.value(),
        steps,
    })
}

/// ASCII rendering: `#` occupied, `*` path, `S`/`G` endpoints.
pub fn render_path(grid: &OccupancyGrid, path: &GridPath) -> String {
    let mut rows: Vec<Vec<char>> = (0..grid.height)
        .map(|r| {
            (0..grid.width)
                .map(|c| if grid.is_occupied(Cell::new(r, c)) { '#' } else { '.' })
                .collect()
        })
        .collect();
    for c in &path.cells {
        rows[c.row][c.col] = '*';
    }
    if let (Some(s), Some(g)) = (path.cells.first(), path.cells.last()) {
        rows[s.row][s.col] = 'S';
        rows[g.row][g.col] = 'G';
    }
    rows.into_iter()
        .map(|r| r.into_iter().collect::<String>() + "\n")
        .collect()
}
