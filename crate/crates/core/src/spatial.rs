//! Uniform grid hash over a point set: fixed-radius and k-nearest queries.

use std::collections::HashMap;

use crate::geom::Point3;

type Cell = (i64, i64, i64);

pub struct GridIndex<'a> {
    points: &'a [Point3],
    cell: f64,
    buckets: HashMap<Cell, Vec<usize>>,
    lo: Cell,
    hi: Cell,
}

impl<'a> GridIndex<'a> {
    /// `cell` must be positive and finite.
    pub fn new(points: &'a [Point3], cell: f64) -> Self {
        assert!(cell > 0.0 && cell.is_finite(), "grid cell must be positive");
        let mut buckets: HashMap<Cell, Vec<usize>> = HashMap::new();
        let mut lo = (i64::MAX, i64::MAX, i64::MAX);
        let mut hi = (i64::MIN, i64::MIN, i64::MIN);
        for (i, &p) in points.iter().enumerate() {
            let c = cell_of(p, cell);
            lo = (lo.0.min(c.0), lo.1.min(c.1), lo.2.min(c.2));
            hi = (hi.0.max(c.0), hi.1.max(c.1), hi.2.max(c.2));
            buckets.entry(c).or_default().push(i);
        }
        GridIndex {
            points,
            cell,
            buckets,
            lo,
            hi,
        }
    }

    /// Cell size giving roughly `per_cell` points per occupied cell on a
    /// surface-like cloud.
    pub fn auto_cell(points: &[Point3], per_cell: usize) -> f64 {
        if points.len() < 2 {
            return 1.0;
        }
        let (mut lo, mut hi) = (points[0], points[0]);
        for p in points {
            lo = Point3::new(lo.x.min(p.x), lo.y.min(p.y), lo.z.min(p.z));
            hi = Point3::new(hi.x.max(p.x), hi.y.max(p.y), hi.z.max(p.z));
        }
        let extent = hi - lo;
        let mut dims = [extent.x, extent.y, extent.z];
        dims.sort_by(|a, b| b.total_cmp(a));
        // area of the two largest extents, treated as a surface
        let area = (dims[0] * dims[1]).max(dims[0] * dims[0] * 1e-6);
        let cell = (area * per_cell as f64 / points.len() as f64).sqrt();
        if cell.is_finite() && cell > 0.0 {
            cell
        } else {
            1.0
        }
    }

    pub fn points(&self) -> &[Point3] {
        self.points
    }

    /// Indices of all points with `|p − q| ≤ radius`, in ascending order.
    /// `radius` must not exceed the cell size.
    pub fn within(&self, q: Point3, radius: f64, out: &mut Vec<usize>) {
        debug_assert!(radius <= self.cell);
        out.clear();
        let c = cell_of(q, self.cell);
        let r2 = radius * radius;
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(bucket) = self.buckets.get(&(c.0 + dx, c.1 + dy, c.2 + dz)) {
                        out.extend(
                            bucket
                                .iter()
                                .copied()
                                .filter(|&j| self.points[j].distance_squared(q) <= r2),
                        );
                    }
                }
            }
        }
        out.sort_unstable();
    }

    /// The `k` nearest points to `q` (including `q` itself if it is in the
    /// set), ordered by distance then index.
    pub fn knn(&self, q: Point3, k: usize) -> Vec<usize> {
        let k = k.min(self.points.len());
        if k == 0 {
            return Vec::new();
        }
        let c = cell_of(q, self.cell);
        let max_ring = [
            (c.0 - self.lo.0).abs(),
            (self.hi.0 - c.0).abs(),
            (c.1 - self.lo.1).abs(),
            (self.hi.1 - c.1).abs(),
            (c.2 - self.lo.2).abs(),
            (self.hi.2 - c.2).abs(),
        ]
        .into_iter()
        .max()
        .unwrap_or(0);

        let mut found: Vec<(f64, usize)> = Vec::new();
        let mut ring = 0i64;
        loop {
            let side = 2 * ring + 1;
            if ring > 1 && (side * side * side) as usize > 4 * self.buckets.len() {
                // sparse far shells: scanning everything is cheaper
                found = self
                    .points
                    .iter()
                    .enumerate()
                    .map(|(j, p)| (p.distance_squared(q), j))
                    .collect();
                break;
            }
            self.visit_ring(c, ring, |j| {
                found.push((self.points[j].distance_squared(q), j));
            });
            // anything in ring + 1 or beyond lies at least ring * cell away
            if found.len() >= k {
                found.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                found.truncate(k);
                let bound = ring as f64 * self.cell;
                if found[k - 1].0 < bound * bound || ring >= max_ring {
                    break;
                }
            }
            if ring >= max_ring {
                break;
            }
            ring += 1;
        }
        found.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        found.truncate(k);
        found.into_iter().map(|(_, j)| j).collect()
    }

    fn visit_ring(&self, c: Cell, ring: i64, mut f: impl FnMut(usize)) {
        let mut visit = |cell: Cell| {
            if let Some(bucket) = self.buckets.get(&cell) {
                bucket.iter().for_each(|&j| f(j));
            }
        };
        if ring == 0 {
            visit(c);
            return;
        }
        for dx in -ring..=ring {
            for dy in -ring..=ring {
                if dx.abs() == ring || dy.abs() == ring {
                    for dz in -ring..=ring {
                        visit((c.0 + dx, c.1 + dy, c.2 + dz));
                    }
                } else {
                    visit((c.0 + dx, c.1 + dy, c.2 - ring));
                    visit((c.0 + dx, c.1 + dy, c.2 + ring));
                }
            }
        }
    }
}

fn cell_of(p: Point3, cell: f64) -> Cell {
    (
        (p.x / cell).floor() as i64,
        (p.y / cell).floor() as i64,
        (p.z / cell).floor() as i64,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute_knn(points: &[Point3], q: Point3, k: usize) -> Vec<usize> {
        let mut all: Vec<(f64, usize)> = points
            .iter()
            .enumerate()
            .map(|(i, p)| (p.distance_squared(q), i))
            .collect();
        all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        all.into_iter().take(k).map(|(_, i)| i).collect()
    }

    fn pts() -> impl Strategy<Value = Vec<Point3>> {
        prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64, -0.2..0.2f64), 1..300)
            .prop_map(|v| v.into_iter().map(|(x, y, z)| Point3::new(x, y, z)).collect())
    }

    proptest! {
        #[test]
        fn knn_matches_brute_force(points in pts(), k in 1usize..20, qi in 0usize..300, cell in 0.01..0.7f64) {
            let index = GridIndex::new(&points, cell);
            let q = points[qi % points.len()];
            prop_assert_eq!(index.knn(q, k), brute_knn(&points, q, k));
            let far = Point3::new(5.0, -3.0, 2.0);
            prop_assert_eq!(index.knn(far, k), brute_knn(&points, far, k));
        }

        #[test]
        fn within_matches_brute_force(points in pts(), qi in 0usize..300, r in 0.01..0.3f64) {
            let index = GridIndex::new(&points, r);
            let q = points[qi % points.len()];
            let mut got = Vec::new();
            index.within(q, r, &mut got);
            let want: Vec<usize> = (0..points.len()).filter(|&j| points[j].distance_squared(q) <= r * r).collect();
            prop_assert_eq!(got, want);
        }
    }
}
