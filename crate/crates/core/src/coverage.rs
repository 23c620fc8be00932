//! Coverage planning over a surface cluster.
//!
//! Pipeline: PCA normals from k-nearest neighborhoods, voxel-spaced surface
//! samples, one virtual fixture per sample offset along its normal, then a
//! reachability pass that marks unattainable fixtures and orders the rest
//! in serpentine rows over the surface.

use std::f64::consts::{PI, TAU};

use nalgebra::{Matrix3, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cloud::{voxel_downsample, voxel_groups, voxel_index, PointCloud};
use crate::detection::{Cluster, ClusterId};
use crate::exclusion::{apply_exclusions, ExclusionSet};
use crate::geom::{Point3, Pose, UnitQuaternion};
use crate::spatial::GridIndex;

/// Fewest retained points a plan can be built from.
pub const MIN_PLAN_POINTS: usize = 3;

#[derive(Debug, Error, PartialEq)]
pub enum PlanError {
    #[error("need at least 3 points for normal estimation, got {0}")]
    TooFewPoints(usize),
    #[error("neighborhood of point {0} has rank < 2")]
    DegenerateNeighborhood(usize),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("exclusions target cluster {found}, expected {expected}")]
    ClusterMismatch {
        expected: ClusterId,
        found: ClusterId,
    },
    #[error("only {0} points remain after exclusion")]
    EmptyAfterExclusion(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceNormals {
    pub normals: Vec<Point3>,
    pub viewpoint: Point3,
}

impl SurfaceNormals {
    /// Normalized mean of all normals, if it is not degenerate.
    pub fn mean(&self) -> Option<Point3> {
        self.normals
            .iter()
            .fold(Point3::ORIGIN, |acc, &n| acc + n)
            .normalized()
    }
}

/// Eigen-decomposition of a point set's covariance, eigenvalues ascending.
#[derive(Debug, Clone, Copy)]
pub struct PrincipalAxes {
    pub mean: Point3,
    pub values: [f64; 3],
    pub axes: [Point3; 3],
}

pub fn principal_axes<I>(points: I) -> Option<PrincipalAxes>
where
    I: IntoIterator<Item = Point3>,
    I::IntoIter: Clone,
{
    let it = points.into_iter();
    let n = it.clone().count();
    if n == 0 {
        return None;
    }
    let mean = it.clone().fold(Point3::ORIGIN, |a, p| a + p) * (1.0 / n as f64);
    let mut cov = Matrix3::<f64>::zeros();
    for p in it {
        let d = p - mean;
        let v = nalgebra::Vector3::new(d.x, d.y, d.z);
        cov += v * v.transpose();
    }
    cov /= n as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let axis = |i: usize| {
        let c = eig.eigenvectors.column(i);
        Point3::new(c[0], c[1], c[2])
    };
    Some(PrincipalAxes {
        mean,
        values: order.map(|i| eig.eigenvalues[i]),
        axes: order.map(axis),
    })
}

/// Per-point PCA normals from the `k` nearest neighbors (the point itself
/// included), flipped to face `viewpoint`.
pub fn estimate_normals(
    cloud: &PointCloud,
    k: usize,
    viewpoint: Point3,
) -> Result<SurfaceNormals, PlanError> {
    if cloud.len() < 3 {
        return Err(PlanError::TooFewPoints(cloud.len()));
    }
    if k < 3 {
        return Err(PlanError::InvalidParameter(format!("k must be >= 3, got {k}")));
    }
    if !viewpoint.is_finite() {
        return Err(PlanError::InvalidParameter("viewpoint must be finite".into()));
    }
    let points = cloud.points();
    let index = GridIndex::new(points, GridIndex::auto_cell(points, k));
    let mut normals = Vec::with_capacity(points.len());
    for (i, &p) in points.iter().enumerate() {
        let neighbors = index.knn(p, k);
        let pa = principal_axes(neighbors.iter().map(|&j| points[j]))
            .ok_or(PlanError::DegenerateNeighborhood(i))?;
        let spread = pa.values[2];
        if !(spread > 0.0) || pa.values[1] <= 1e-10 * spread {
            return Err(PlanError::DegenerateNeighborhood(i));
        }
        let mut n = pa.axes[0]
            .normalized()
            .ok_or(PlanError::DegenerateNeighborhood(i))?;
        if (viewpoint - p).dot(n) < 0.0 {
            n = -n;
        }
        normals.push(n);
    }
    Ok(SurfaceNormals { normals, viewpoint })
}

/// Target end-effector pose covering one surface sample.
///
/// The pose's local +z equals the surface normal, so the tool approaches
/// along local −z.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VirtualFixture {
    pub pose: Pose,
    pub source: Point3,
    pub normal: Point3,
    pub reachable: bool,
}

impl VirtualFixture {
    /// Unit direction the tool points in (toward the surface).
    pub fn approach_axis(&self) -> Point3 {
        -self.pose.orientation.axes()[2]
    }
}

/// Orientation with local z along `normal` and local x the projection of
/// world +z (or world +x when the normal is vertical).
pub fn fixture_orientation(normal: Point3) -> UnitQuaternion {
    let z = normal.normalized().unwrap_or(Point3::new(0.0, 0.0, 1.0));
    let project = |v: Point3| (v - z * v.dot(z)).normalized();
    let x = project(Point3::new(0.0, 0.0, 1.0))
        .filter(|_| {
            let ez = Point3::new(0.0, 0.0, 1.0);
            (ez - z * ez.dot(z)).norm() > 1e-9
        })
        .or_else(|| project(Point3::new(1.0, 0.0, 0.0)))
        .unwrap_or(Point3::new(1.0, 0.0, 0.0));
    let y = z.cross(x);
    UnitQuaternion::from_basis(x, y, z).unwrap_or(UnitQuaternion::IDENTITY)
}

/// One fixture per occupied `spacing` voxel, offset `offset` along the
/// normal of the original point nearest to the voxel centroid.
pub fn generate_fixtures(
    cloud: &PointCloud,
    normals: &SurfaceNormals,
    offset: f64,
    spacing: f64,
) -> Result<Vec<VirtualFixture>, PlanError> {
    if !(offset > 0.0 && offset.is_finite()) {
        return Err(PlanError::InvalidParameter(format!("offset must be positive, got {offset}")));
    }
    if !(spacing > 0.0 && spacing.is_finite()) {
        return Err(PlanError::InvalidParameter(format!("spacing must be positive, got {spacing}")));
    }
    if normals.normals.len() != cloud.len() {
        return Err(PlanError::InvalidParameter(format!(
            "{} normals for {} points",
            normals.normals.len(),
            cloud.len()
        )));
    }
    if cloud.is_empty() {
        return Ok(Vec::new());
    }
    let samples = voxel_downsample(cloud, spacing)
        .map_err(|e| PlanError::InvalidParameter(e.to_string()))?;
    let index = GridIndex::new(cloud.points(), spacing);
    Ok(samples
        .points()
        .iter()
        .map(|&source| {
            let nearest = index.knn(source, 1)[0];
            let normal = normals.normals[nearest];
            VirtualFixture {
                pose: Pose::new(source + normal * offset, fixture_orientation(normal)),
                source,
                normal,
                reachable: true,
            }
        })
        .collect())
}

/// Arm reach proxy: a spherical shell around the shoulder plus an
/// approach cone about the shoulder→fixture ray.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReachabilityModel {
    pub shoulder: Point3,
    pub r_min: f64,
    pub r_max: f64,
    pub cone_half_angle: f64,
}

impl ReachabilityModel {
    pub fn unconstrained(shoulder: Point3) -> Self {
        ReachabilityModel {
            shoulder,
            r_min: 0.0,
            r_max: 1e6,
            cone_half_angle: PI,
        }
    }

    pub fn validate(&self) -> Result<(), PlanError> {
        if !self.shoulder.is_finite() {
            return Err(PlanError::InvalidParameter("shoulder must be finite".into()));
        }
        if !(0.0 <= self.r_min && self.r_min < self.r_max) {
            return Err(PlanError::InvalidParameter(format!(
                "need 0 <= r_min < r_max, got {} / {}",
                self.r_min, self.r_max
            )));
        }
        if !(0.0..=PI).contains(&self.cone_half_angle) {
            return Err(PlanError::InvalidParameter(format!(
                "cone_half_angle must lie in [0, pi], got {}",
                self.cone_half_angle
            )));
        }
        Ok(())
    }

    pub fn in_range(&self, position: Point3) -> bool {
        let d = position.distance(self.shoulder);
        self.r_min <= d && d <= self.r_max
    }

    /// Angle between the approach axis and the shoulder→fixture ray.
    pub fn approach_deviation(&self, pose: &Pose) -> f64 {
        let approach = -pose.orientation.axes()[2];
        match (pose.position - self.shoulder).normalized() {
            Some(ray) => approach.dot(ray).clamp(-1.0, 1.0).acos(),
            None => 0.0,
        }
    }
}

impl Default for ReachabilityModel {
    fn default() -> Self {
        ReachabilityModel {
            shoulder: Point3::ORIGIN,
            r_min: 0.2,
            r_max: 1.0,
            cone_half_angle: 1.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepairPlan {
    pub cluster_id: ClusterId,
    pub fixtures: Vec<VirtualFixture>,
    pub spacing: f64,
    pub offset: f64,
    pub coverage_fraction: f64,
}

impl RepairPlan {
    pub fn empty(cluster_id: ClusterId, spacing: f64, offset: f64) -> Self {
        RepairPlan {
            cluster_id,
            fixtures: Vec::new(),
            spacing,
            offset,
            coverage_fraction: 0.0,
        }
    }

    pub fn reachable_count(&self) -> usize {
        self.fixtures.iter().filter(|f| f.reachable).count()
    }
}

/// Marks each fixture attainable or not and orders the plan.
///
/// A fixture is attainable when its distance to the shoulder lies in
/// `[r_min, r_max]` and one of `roll_candidates` evenly spaced rolls about
/// the approach axis keeps the axis inside the cone. Rolling never moves the
/// axis, so the first admissible roll (zero) is the one kept; the loop is
/// where a richer arm model would search. Unattainable fixtures stay in the
/// plan with `reachable = false`.
pub fn plan_coverage(
    cluster_id: ClusterId,
    fixtures: &[VirtualFixture],
    reach: &ReachabilityModel,
    roll_candidates: usize,
    spacing: f64,
    offset: f64,
) -> Result<RepairPlan, PlanError> {
    reach.validate()?;
    if roll_candidates == 0 {
        return Err(PlanError::InvalidParameter("roll_candidates must be >= 1".into()));
    }
    let mut planned: Vec<VirtualFixture> = fixtures
        .iter()
        .map(|f| {
            let mut f = *f;
            f.reachable = false;
            if reach.in_range(f.pose.position) {
                for i in 0..roll_candidates {
                    let roll = TAU * i as f64 / roll_candidates as f64;
                    let candidate = if i == 0 {
                        f.pose
                    } else {
                        f.pose
                            .compose(&Pose::from_rotation(UnitQuaternion::from_rotation_z(roll)))
                    };
                    if reach.approach_deviation(&candidate) <= reach.cone_half_angle {
                        f.pose = candidate;
                        f.reachable = true;
                        break;
                    }
                }
            }
            f
        })
        .collect();
    boustrophedon_sort(&mut planned, spacing);
    let total = planned.len();
    let reachable = planned.iter().filter(|f| f.reachable).count();
    Ok(RepairPlan {
        cluster_id,
        fixtures: planned,
        spacing,
        offset,
        coverage_fraction: if total == 0 {
            0.0
        } else {
            reachable as f64 / total as f64
        },
    })
}

/// Serpentine order over the plane of the two largest principal axes of
/// the fixture sources: rows `spacing` wide across the second axis,
/// alternating direction along the first.
pub fn boustrophedon_sort(fixtures: &mut [VirtualFixture], spacing: f64) {
    let Some(pa) = principal_axes(fixtures.iter().map(|f| f.source).collect::<Vec<_>>()) else {
        return;
    };
    let canonical = |a: Point3| {
        let c = [a.x, a.y, a.z];
        let dominant = c
            .iter()
            .copied()
            .max_by(|p, q| p.abs().total_cmp(&q.abs()))
            .unwrap_or(1.0);
        if dominant < 0.0 {
            -a
        } else {
            a
        }
    };
    let along = canonical(pa.axes[2]);
    let across = canonical(pa.axes[1]);
    let coords: Vec<(f64, f64)> = fixtures
        .iter()
        .map(|f| {
            let d = f.source - pa.mean;
            (d.dot(along), d.dot(across))
        })
        .collect();
    let v_min = coords.iter().map(|c| c.1).fold(f64::INFINITY, f64::min);
    let mut keyed: Vec<(i64, f64, usize)> = coords
        .iter()
        .enumerate()
        .map(|(i, &(u, v))| {
            let row = ((v - v_min) / spacing + 0.5).floor() as i64;
            let key = if row % 2 == 0 { u } else { -u };
            (row, key, i)
        })
        .collect();
    keyed.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)).then(a.2.cmp(&b.2)));
    let ordered: Vec<VirtualFixture> = keyed.iter().map(|&(_, _, i)| fixtures[i]).collect();
    fixtures.copy_from_slice(&ordered);
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlannerParams {
    pub offset: f64,
    pub spacing: f64,
    pub k: usize,
    pub roll_candidates: usize,
    pub reach: ReachabilityModel,
    /// Sensor position used to orient normals.
    pub viewpoint: Point3,
}

impl Default for PlannerParams {
    fn default() -> Self {
        PlannerParams {
            offset: 0.15,
            spacing: 0.05,
            k: 15,
            roll_candidates: 8,
            reach: ReachabilityModel::default(),
            viewpoint: Point3::new(0.0, 0.0, 1.0),
        }
    }
}

/// Normals, fixtures and coverage for a cloud.
pub fn plan_cloud(
    cluster_id: ClusterId,
    cloud: &PointCloud,
    params: &PlannerParams,
) -> Result<RepairPlan, PlanError> {
    let normals = estimate_normals(cloud, params.k, params.viewpoint)?;
    let fixtures = generate_fixtures(cloud, &normals, params.offset, params.spacing)?;
    plan_coverage(
        cluster_id,
        &fixtures,
        &params.reach,
        params.roll_candidates,
        params.spacing,
        params.offset,
    )
}

/// Carves the exclusions out of the cluster and plans the remainder.
/// Returns the plan together with the retained cloud sent back to the
/// reviewer.
pub fn replan_after_exclusion(
    cluster: &Cluster,
    set: &ExclusionSet,
    params: &PlannerParams,
) -> Result<(RepairPlan, PointCloud), PlanError> {
    if set.cluster_id != cluster.id {
        return Err(PlanError::ClusterMismatch {
            expected: cluster.id,
            found: set.cluster_id,
        });
    }
    let retained = apply_exclusions(&cluster.cloud, set).retained;
    if retained.len() < MIN_PLAN_POINTS {
        return Err(PlanError::EmptyAfterExclusion(retained.len()));
    }
    let normals = estimate_normals(&retained, params.k, params.viewpoint)?;
    let mut fixtures = generate_fixtures(&retained, &normals, params.offset, params.spacing)?;
    snap_sources_outside(&mut fixtures, &retained, &normals, set, params);
    let plan = plan_coverage(
        cluster.id,
        &fixtures,
        &params.reach,
        params.roll_candidates,
        params.spacing,
        params.offset,
    )?;
    Ok((plan, retained))
}

/// A voxel centroid of points outside a convex volume can still fall inside
/// it (around corners). Such fixtures are moved onto the retained point of
/// the same voxel nearest the centroid.
fn snap_sources_outside(
    fixtures: &mut [VirtualFixture],
    retained: &PointCloud,
    normals: &SurfaceNormals,
    set: &ExclusionSet,
    params: &PlannerParams,
) {
    if set.volumes.is_empty() || !fixtures.iter().any(|f| set.contains(f.source)) {
        return;
    }
    let groups = voxel_groups(retained, params.spacing).expect("spacing validated");
    for f in fixtures.iter_mut().filter(|f| set.contains(f.source)) {
        let Some(members) = groups.get(&voxel_index(f.source, params.spacing)) else {
            continue;
        };
        let points = retained.points();
        let nearest = members
            .iter()
            .copied()
            .min_by(|&a, &b| {
                points[a]
                    .distance_squared(f.source)
                    .total_cmp(&points[b].distance_squared(f.source))
                    .then(a.cmp(&b))
            })
            .expect("occupied voxel");
        let normal = normals.normals[nearest];
        *f = VirtualFixture {
            pose: Pose::new(points[nearest] + normal * params.offset, fixture_orientation(normal)),
            source: points[nearest],
            normal,
            reachable: f.reachable,
        };
    }
}
