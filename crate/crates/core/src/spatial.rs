//! Static 3-d tree over a point slice.
//!
//! Results are reported as indices into the slice the tree was built from.
//! Queries are exact; ties between equidistant points resolve to the lower
//! index so callers get deterministic answers.

use crate::geom::{dist2, Point3};

const LEAF_SIZE: usize = 8;

#[derive(Clone, Debug)]
pub struct KdTree {
    points: Vec<Point3>,
    // permutation of 0..n; each subrange [lo, hi) with hi - lo > LEAF_SIZE
    // is split at mid = (lo + hi) / 2 along axis depth % 3
    order: Vec<usize>,
}

impl KdTree {
    pub fn new(points: Vec<Point3>) -> Self {
        let mut order: Vec<usize> = (0..points.len()).collect();
        build(&points, &mut order, 0);
        KdTree { points, order }
    }

    pub fn from_indices(all: &[Point3], indices: &[usize]) -> Self {
        KdTree::new(indices.iter().map(|&i| all[i]).collect())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, i: usize) -> Point3 {
        self.points[i]
    }

    /// All points with `|p - q| <= radius`, sorted by index.
    pub fn within_radius(&self, query: Point3, radius: f64) -> Vec<usize> {
        let mut out = Vec::new();
        if radius >= 0.0 {
            self.radius_rec(0, self.order.len(), 0, query, radius * radius, &mut out);
        }
        out.sort_unstable();
        out
    }

    fn radius_rec(
        &self,
        lo: usize,
        hi: usize,
        depth: usize,
        q: Point3,
        r2: f64,
        out: &mut Vec<usize>,
    ) {
        if hi - lo <= LEAF_SIZE {
            out.extend(
                self.order[lo..hi]
                    .iter()
                    .copied()
                    .filter(|&i| dist2(self.points[i], q) <= r2),
            );
            return;
        }
        let mid = (lo + hi) / 2;
        let axis = depth % 3;
        let pivot = self.order[mid];
        let split = self.points[pivot][axis];
        let delta = q[axis] - split;
        if dist2(self.points[pivot], q) <= r2 {
            out.push(pivot);
        }
        if delta <= 0.0 || delta * delta <= r2 {
            self.radius_rec(lo, mid, depth + 1, q, r2, out);
        }
        if delta >= 0.0 || delta * delta <= r2 {
            self.radius_rec(mid + 1, hi, depth + 1, q, r2, out);
        }
    }

    /// Nearest point and its squared distance.
    pub fn nearest(&self, query: Point3) -> Option<(usize, f64)> {
        let mut best = (usize::MAX, f64::INFINITY);
        if self.points.is_empty() {
            return None;
        }
        self.nearest_rec(0, self.order.len(), 0, query, &mut best);
        Some(best)
    }

    fn nearest_rec(&self, lo: usize, hi: usize, depth: usize, q: Point3, best: &mut (usize, f64)) {
        let mut consider = |i: usize| {
            let d = dist2(self.points[i], q);
            if d < best.1 || (d == best.1 && i < best.0) {
                *best = (i, d);
            }
        };
        if hi - lo <= LEAF_SIZE {
            self.order[lo..hi].iter().for_each(|&i| consider(i));
            return;
        }
        let mid = (lo + hi) / 2;
        let axis = depth % 3;
        let pivot = self.order[mid];
        consider(pivot);
        let delta = q[axis] - self.points[pivot][axis];
        let (near, far) = if delta <= 0.0 {
            ((lo, mid), (mid + 1, hi))
        } else {
            ((mid + 1, hi), (lo, mid))
        };
        self.nearest_rec(near.0, near.1, depth + 1, q, best);
        if delta * delta <= best.1 {
            self.nearest_rec(far.0, far.1, depth + 1, q, best);
        }
    }

    /// The `k` nearest points ordered by (distance, index).
    pub fn k_nearest(&self, query: Point3, k: usize) -> Vec<(usize, f64)> {
        let mut heap: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
        if k > 0 {
            self.knn_rec(0, self.order.len(), 0, query, k, &mut heap);
        }
        heap.into_iter().map(|(d, i)| (i, d)).collect()
    }

    fn knn_rec(
        &self,
        lo: usize,
        hi: usize,
        depth: usize,
        q: Point3,
        k: usize,
        best: &mut Vec<(f64, usize)>,
    ) {
        let mut consider = |i: usize| {
            let cand = (dist2(self.points[i], q), i);
            if best.len() == k && !lex_less(cand, best[k - 1]) {
                return;
            }
            let pos = best.partition_point(|&e| lex_less(e, cand));
            best.insert(pos, cand);
            best.truncate(k);
        };
        if hi - lo <= LEAF_SIZE {
            self.order[lo..hi].iter().for_each(|&i| consider(i));
            return;
        }
        let mid = (lo + hi) / 2;
        let axis = depth % 3;
        let pivot = self.order[mid];
        consider(pivot);
        let delta = q[axis] - self.points[pivot][axis];
        let (near, far) = if delta <= 0.0 {
            ((lo, mid), (mid + 1, hi))
        } else {
            ((mid + 1, hi), (lo, mid))
        };
        self.knn_rec(near.0, near.1, depth + 1, q, k, best);
        if best.len() < k || delta * delta <= best[k - 1].0 {
            self.knn_rec(far.0, far.1, depth + 1, q, k, best);
        }
    }
}

fn lex_less(a: (f64, usize), b: (f64, usize)) -> bool {
    a.0 < b.0 || (a.0 == b.0 && a.1 < b.1)
}

fn build(points: &[Point3], order: &mut [usize], depth: usize) {
    if order.len() <= LEAF_SIZE {
        return;
    }
    let axis = depth % 3;
    let mid = order.len() / 2;
    order.select_nth_unstable_by(mid, |&a, &b| {
        points[a][axis].total_cmp(&points[b][axis]).then(a.cmp(&b))
    });
    let (left, right) = order.split_at_mut(mid);
    build(points, left, depth + 1);
    build(points, &mut right[1..], depth + 1);
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute_nearest(pts: &[Point3], q: Point3) -> (usize, f64) {
        let mut best = (usize::MAX, f64::INFINITY);
        for (i, p) in pts.iter().enumerate() {
            let d = dist2(*p, q);
            if d < best.1 {
                best = (i, d);
            }
        }
        best
    }

    fn grid_point() -> impl Strategy<Value = Point3> {
        // coarse lattice so that ties and duplicates actually occur
        prop::array::uniform3((-4i32..4).prop_map(|v| v as f64 * 0.25))
    }

    proptest! {
        #[test]
        fn radius_matches_brute_force(
            pts in prop::collection::vec(grid_point(), 0..200),
            q in grid_point(),
            r in 0.0f64..1.5,
        ) {
            let tree = KdTree::new(pts.clone());
            let expected: Vec<usize> = (0..pts.len()).filter(|&i| dist2(pts[i], q) <= r * r).collect();
            prop_assert_eq!(tree.within_radius(q, r), expected);
        }

        #[test]
        fn nearest_matches_brute_force(
            pts in prop::collection::vec(grid_point(), 1..200),
            q in prop::array::uniform3(-1.2f64..1.2),
        ) {
            let tree = KdTree::new(pts.clone());
            prop_assert_eq!(tree.nearest(q).unwrap(), brute_nearest(&pts, q));
        }

        #[test]
        fn knn_matches_sorted_scan(
            pts in prop::collection::vec(grid_point(), 1..120),
            q in grid_point(),
            k in 1usize..12,
        ) {
            let tree = KdTree::new(pts.clone());
            let mut all: Vec<(f64, usize)> = pts.iter().enumerate().map(|(i, p)| (dist2(*p, q), i)).collect();
            all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let expected: Vec<(usize, f64)> = all.into_iter().take(k).map(|(d, i)| (i, d)).collect();
            prop_assert_eq!(tree.k_nearest(q, k), expected);
        }
    }

    #[test]
    fn empty_tree() {
        let tree = KdTree::new(vec![]);
        assert!(tree.nearest([0.0; 3]).is_none());
        assert!(tree.within_radius([0.0; 3], 1.0).is_empty());
    }
}
