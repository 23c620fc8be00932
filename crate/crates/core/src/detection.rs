//! Corrosion masking and Euclidean clustering of the masked points.
//!
//! The mask is a fixed rust-hue color threshold standing in for a learned
//! detector. Clusters are connected components of the fixed-radius
//! neighbor graph.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cloud::{PointCloud, Rgb};
use crate::geom::Point3;
use crate::spatial::GridIndex;

pub const RUST_MIN_RED: u8 = 110;
pub const RUST_MAX_GREEN: u8 = 95;
pub const RUST_MAX_BLUE: u8 = 90;

#[derive(Debug, Error, PartialEq)]
pub enum DetectionError {
    #[error("cloud has no colors; the corrosion stub needs per-point rgb")]
    MissingColors,
    #[error("cluster radius must be positive, got {0}")]
    NonPositiveRadius(f64),
    #[error("min_size must be at least 1")]
    ZeroMinSize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ClusterId(pub u32);

impl fmt::Display for ClusterId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Sorted, unique indices into a cloud judged corroded.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CorrosionMask {
    indices: Vec<usize>,
}

impl CorrosionMask {
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

pub fn is_rust_colored(c: Rgb) -> bool {
    c.r >= RUST_MIN_RED && c.g <= RUST_MAX_GREEN && c.b <= RUST_MAX_BLUE
}

pub fn detect_corrosion_stub(cloud: &PointCloud) -> Result<CorrosionMask, DetectionError> {
    let colors = cloud.colors().ok_or(DetectionError::MissingColors)?;
    Ok(CorrosionMask {
        indices: colors
            .iter()
            .enumerate()
            .filter(|(_, &c)| is_rust_colored(c))
            .map(|(i, _)| i)
            .collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    pub id: ClusterId,
    pub cloud: PointCloud,
    pub centroid: Point3,
}

impl Cluster {
    /// `None` for an empty cloud.
    pub fn new(id: ClusterId, cloud: PointCloud) -> Option<Self> {
        let centroid = cloud.centroid()?;
        Some(Cluster {
            id,
            cloud,
            centroid,
        })
    }

    pub fn len(&self) -> usize {
        self.cloud.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cloud.is_empty()
    }
}

/// One reviewable detection: a cluster plus an opaque reference to the
/// scene image shown to the reviewer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionEvent {
    pub cluster: Cluster,
    pub snapshot: String,
    pub timestamp: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClusterParams {
    pub radius: f64,
    pub min_size: usize,
}

impl Default for ClusterParams {
    fn default() -> Self {
        ClusterParams {
            radius: 0.05,
            min_size: 30,
        }
    }
}

/// Connected components of the "within `radius`" graph, largest first.
///
/// Returns member indices into `points`, each list ascending. Components
/// smaller than `min_size` are dropped; ties in size are broken by the
/// smallest member index.
pub fn connected_components(
    points: &[Point3],
    radius: f64,
    min_size: usize,
) -> Result<Vec<Vec<usize>>, DetectionError> {
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(DetectionError::NonPositiveRadius(radius));
    }
    if min_size == 0 {
        return Err(DetectionError::ZeroMinSize);
    }
    let index = GridIndex::new(points, radius);
    let mut sets = DisjointSets::new(points.len());
    let mut near = Vec::new();
    for (i, &p) in points.iter().enumerate() {
        index.within(p, radius, &mut near);
        for &j in near.iter().filter(|&&j| j > i) {
            sets.union(i, j);
        }
    }
    let mut by_root: std::collections::HashMap<usize, Vec<usize>> = Default::default();
    for i in 0..points.len() {
        by_root.entry(sets.find(i)).or_default().push(i);
    }
    let mut comps: Vec<Vec<usize>> = by_root
        .into_values()
        .filter(|members| members.len() >= min_size)
        .collect();
    comps.sort_by(|a, b| b.len().cmp(&a.len()).then(a[0].cmp(&b[0])));
    Ok(comps)
}

/// Splits a cloud into clusters. Ids are assigned `first_id`, `first_id + 1`,
/// ... in output order.
pub fn euclidean_cluster(
    cloud: &PointCloud,
    radius: f64,
    min_size: usize,
    first_id: u32,
) -> Result<Vec<Cluster>, DetectionError> {
    let comps = connected_components(cloud.points(), radius, min_size)?;
    Ok(comps
        .iter()
        .enumerate()
        .map(|(k, members)| {
            Cluster::new(ClusterId(first_id + k as u32), cloud.select(members))
                .expect("components are non-empty")
        })
        .collect())
}

/// Mask then cluster: the full stand-in detection pipeline for one cloud.
pub fn detect_clusters(
    cloud: &PointCloud,
    params: ClusterParams,
    first_id: u32,
) -> Result<Vec<Cluster>, DetectionError> {
    let mask = detect_corrosion_stub(cloud)?;
    euclidean_cluster(
        &cloud.select(mask.indices()),
        params.radius,
        params.min_size,
        first_id,
    )
}

struct DisjointSets {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl DisjointSets {
    fn new(n: usize) -> Self {
        DisjointSets {
            parent: (0..n).collect(),
            rank: vec![0; n],
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        match self.rank[ra].cmp(&self.rank[rb]) {
            std::cmp::Ordering::Less => self.parent[ra] = rb,
            std::cmp::Ordering::Greater => self.parent[rb] = ra,
            std::cmp::Ordering::Equal => {
                self.parent[rb] = ra;
                self.rank[ra] += 1;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn uniform(points: Vec<Point3>, c: Rgb) -> PointCloud {
        let n = points.len();
        PointCloud::with_colors(points, vec![c; n]).unwrap()
    }

    fn line(n: usize) -> Vec<Point3> {
        (0..n).map(|i| Point3::new(i as f64, 0.0, 0.0)).collect()
    }

    #[test]
    fn rust_colored_points_all_masked() {
        let m = detect_corrosion_stub(&uniform(line(5), Rgb::new(200, 60, 40))).unwrap();
        assert_eq!(m.indices(), &[0, 1, 2, 3, 4]);
    }

    #[test]
    fn gray_points_not_masked() {
        let m = detect_corrosion_stub(&uniform(line(5), Rgb::new(90, 90, 90))).unwrap();
        assert!(m.is_empty());
    }

    #[test]
    fn thresholds_are_inclusive() {
        assert!(is_rust_colored(Rgb::new(110, 95, 90)));
        assert!(!is_rust_colored(Rgb::new(109, 95, 90)));
        assert!(!is_rust_colored(Rgb::new(110, 96, 90)));
        assert!(!is_rust_colored(Rgb::new(110, 95, 91)));
    }

    #[test]
    fn colorless_cloud_rejected() {
        assert_eq!(
            detect_corrosion_stub(&PointCloud::new(line(2))),
            Err(DetectionError::MissingColors)
        );
    }

    #[test]
    fn close_pair_is_one_cluster() {
        let c = PointCloud::new(vec![Point3::ORIGIN, Point3::new(0.0, 0.0, 0.01)]);
        let out = euclidean_cluster(&c, 0.05, 2, 0).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].len(), 2);
        assert!(out[0].centroid.distance(Point3::new(0.0, 0.0, 0.005)) < 1e-12);
    }

    #[test]
    fn distant_pair_is_two_singletons() {
        let c = PointCloud::new(vec![Point3::ORIGIN, Point3::new(1.0, 0.0, 0.0)]);
        let out = euclidean_cluster(&c, 0.05, 1, 0).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].cloud.points(), &[Point3::ORIGIN]);
        assert_eq!(out[0].id, ClusterId(0));
        assert_eq!(out[1].id, ClusterId(1));
    }

    #[test]
    fn chain_is_connected() {
        let pts: Vec<Point3> = (0..100).map(|i| Point3::new(0.04 * i as f64, 0.0, 0.0)).collect();
        let out = euclidean_cluster(&PointCloud::new(pts), 0.05, 1, 0).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].len(), 100);
    }

    #[test]
    fn small_components_discarded() {
        let mut pts = line(3);
        pts.push(Point3::new(10.0, 0.0, 0.0));
        pts.push(Point3::new(10.5, 0.0, 0.0));
        let out = connected_components(&pts, 1.0, 3).unwrap();
        assert_eq!(out, vec![vec![0, 1, 2]]);
    }

    #[test]
    fn invalid_params() {
        let c = PointCloud::new(line(2));
        assert_eq!(euclidean_cluster(&c, 0.0, 1, 0), Err(DetectionError::NonPositiveRadius(0.0)));
        assert_eq!(euclidean_cluster(&c, 1.0, 0, 0), Err(DetectionError::ZeroMinSize));
    }

    #[test]
    fn mixed_plate_mask_matches_threshold() {
        let rust = Rgb::new(170, 80, 50);
        let gray = Rgb::new(128, 128, 128);
        let mut points = Vec::new();
        let mut colors = Vec::new();
        let mut expected = Vec::new();
        for i in 0..20 {
            for j in 0..20 {
                points.push(Point3::new(i as f64 * 0.01, j as f64 * 0.01, 0.0));
                let valve = (8..12).contains(&i) && (5..15).contains(&j);
                if !valve {
                    expected.push(points.len() - 1);
                }
                colors.push(if valve { gray } else { rust });
            }
        }
        let m = detect_corrosion_stub(&PointCloud::with_colors(points, colors).unwrap()).unwrap();
        assert_eq!(m.indices(), expected.as_slice());
    }

    fn brute_components(points: &[Point3], radius: f64) -> Vec<Vec<usize>> {
        let n = points.len();
        let mut label = vec![usize::MAX; n];
        let mut comps = Vec::new();
        for s in 0..n {
            if label[s] != usize::MAX {
                continue;
            }
            let mut stack = vec![s];
            label[s] = s;
            let mut members = vec![];
            while let Some(i) = stack.pop() {
                members.push(i);
                for j in 0..n {
                    if label[j] == usize::MAX && points[i].distance(points[j]) <= radius {
                        label[j] = s;
                        stack.push(j);
                    }
                }
            }
            members.sort();
            comps.push(members);
        }
        comps
    }

    fn blobby() -> impl Strategy<Value = Vec<Point3>> {
        prop::collection::vec((-0.5..0.5f64, -0.5..0.5f64, -0.1..0.1f64), 1..200)
            .prop_map(|v| v.into_iter().map(|(x, y, z)| Point3::new(x, y, z)).collect())
    }

    proptest! {
        #[test]
        fn matches_brute_force(points in blobby(), min_size in 1usize..6) {
            let got = connected_components(&points, 0.08, min_size).unwrap();
            let mut want: Vec<Vec<usize>> = brute_components(&points, 0.08)
                .into_iter()
                .filter(|c| c.len() >= min_size)
                .collect();
            want.sort_by(|a, b| b.len().cmp(&a.len()).then(a[0].cmp(&b[0])));
            prop_assert_eq!(got, want);
        }

        #[test]
        fn permutation_invariant(points in blobby(), seed in any::<u64>()) {
            use rand::{seq::SliceRandom, SeedableRng};
            let mut order: Vec<usize> = (0..points.len()).collect();
            order.shuffle(&mut rand::rngs::StdRng::seed_from_u64(seed));
            let shuffled: Vec<Point3> = order.iter().map(|&i| points[i]).collect();
            let canon = |comps: Vec<Vec<usize>>, map: &dyn Fn(usize) -> usize| {
                let mut sets: Vec<Vec<usize>> = comps
                    .into_iter()
                    .map(|c| { let mut v: Vec<usize> = c.into_iter().map(map).collect(); v.sort(); v })
                    .collect();
                sets.sort();
                sets
            };
            let a = canon(connected_components(&points, 0.08, 1).unwrap(), &|i| i);
            let b = canon(connected_components(&shuffled, 0.08, 1).unwrap(), &|i| order[i]);
            prop_assert_eq!(a, b);
        }

        #[test]
        fn stub_monotone_in_red(r in any::<u8>(), g in any::<u8>(), b in any::<u8>(), bump in any::<u8>()) {
            let before = is_rust_colored(Rgb::new(r, g, b));
            let after = is_rust_colored(Rgb::new(r.saturating_add(bump), g, b));
            prop_assert!(!before || after);
        }
    }
}
