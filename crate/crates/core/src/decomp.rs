//! Naive farthest-point-sampling decomposition and region adjacency.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::dist2;
use crate::region::RegionDecomposition;
use crate::shape::Shape;
use crate::spatial::KdTree;

pub const DEFAULT_FPS_K: usize = 64;
/// Contact distance for region neighborhood, in unit-sphere shape units.
pub const DEFAULT_ADJACENCY_THRESHOLD: f64 = 0.025;

/// Farthest-point sampling of up to `k` centroids followed by
/// nearest-centroid assignment. Region ids are the centroid ranks `0..m`.
///
/// Sampling stops early once every remaining point coincides with a chosen
/// centroid, so every region is non-empty.
pub fn fps_cluster(shape: &Shape, k: usize, seed: u64) -> Result<RegionDecomposition> {
    if k == 0 {
        return Err(Error::Config(
            "fps centroid count must be at least 1".into(),
        ));
    }
    let n = shape.len();
    if n == 0 {
        return Err(Error::EmptyPointSet);
    }
    let pos = &shape.positions;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let first = rng.random_range(0..n);

    let mut labels = vec![0u32; n];
    let mut min_d: Vec<f64> = pos.iter().map(|p| dist2(*p, pos[first])).collect();
    for c in 1..k.min(n) {
        let (far, far_d) =
            min_d
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (i, &d)| {
                    if d > best.1 {
                        (i, d)
                    } else {
                        best
                    }
                });
        if far_d <= 0.0 {
            break;
        }
        let centroid = pos[far];
        for (i, p) in pos.iter().enumerate() {
            let d = dist2(*p, centroid);
            // strict: ties stay with the lower centroid rank
            if d < min_d[i] {
                min_d[i] = d;
                labels[i] = c as u32;
            }
        }
    }
    RegionDecomposition::new(shape.id.clone(), labels)
}

/// Unordered neighbor pairs `(a, b)`, `a < b`, of regions whose minimum
/// point distance is within `threshold`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdjacencyGraph {
    pub pairs: BTreeSet<(u32, u32)>,
    pub threshold: f64,
}

impl AdjacencyGraph {
    pub fn neighbors(&self, region: u32) -> impl Iterator<Item = u32> + '_ {
        self.pairs.iter().filter_map(move |&(a, b)| {
            if a == region {
                Some(b)
            } else if b == region {
                Some(a)
            } else {
                None
            }
        })
    }

    /// Connected components over `regions`, each sorted, ordered by first id.
    pub fn components(&self, regions: &[u32]) -> Vec<Vec<u32>> {
        let mut uf = UnionFind::new(regions.len());
        let pos = |r: u32| regions.binary_search(&r).ok();
        for &(a, b) in &self.pairs {
            if let (Some(i), Some(j)) = (pos(a), pos(b)) {
                uf.union(i, j);
            }
        }
        let mut groups: std::collections::BTreeMap<usize, Vec<u32>> = Default::default();
        for (i, &r) in regions.iter().enumerate() {
            groups.entry(uf.find(i)).or_default().push(r);
        }
        let mut out: Vec<Vec<u32>> = groups.into_values().collect();
        out.sort();
        out
    }
}

/// Point pairs `(i, j)`, `i < j`, within `threshold` that currently carry
/// different region labels. Merging only removes such pairs, so the list can
/// be computed once and filtered as labels coarsen.
pub fn cross_point_pairs(shape: &Shape, labels: &[u32], threshold: f64) -> Vec<(usize, usize)> {
    let tree = KdTree::new(shape.positions.clone());
    let mut out = Vec::new();
    for (i, p) in shape.positions.iter().enumerate() {
        for j in tree.within_radius(*p, threshold) {
            if j > i && labels[i] != labels[j] {
                out.push((i, j));
            }
        }
    }
    out
}

pub fn pairs_from_points(labels: &[u32], point_pairs: &[(usize, usize)]) -> BTreeSet<(u32, u32)> {
    point_pairs
        .iter()
        .filter_map(|&(i, j)| {
            let (a, b) = (labels[i], labels[j]);
            match a.cmp(&b) {
                std::cmp::Ordering::Less => Some((a, b)),
                std::cmp::Ordering::Greater => Some((b, a)),
                std::cmp::Ordering::Equal => None,
            }
        })
        .collect()
}

pub fn adjacency(shape: &Shape, decomp: &RegionDecomposition, threshold: f64) -> AdjacencyGraph {
    let pts = cross_point_pairs(shape, &decomp.labels, threshold);
    AdjacencyGraph {
        pairs: pairs_from_points(&decomp.labels, &pts),
        threshold,
    }
}

#[derive(Clone, Debug)]
pub(crate) struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    pub(crate) fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
        }
    }

    pub(crate) fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    pub(crate) fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // smaller root wins so component representatives are stable
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}
