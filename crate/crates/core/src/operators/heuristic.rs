//! Label-free geometric stand-ins for the learned operators.

use super::{
    FixOperator, FixRequest, FixResponse, MergeOperator, MergeRequest, MergeResponse, MergeRole,
    OpContext, SplitOperator, SplitRequest, SplitResponse, SPLIT_SLOTS,
};
use crate::decomp::UnionFind;
use crate::error::Result;
use crate::geom::{add, dot, norm, Point3};
use crate::spatial::KdTree;

/// Region growing over a k-nearest-neighbor graph of the request points.
///
/// An edge is cut when the normals of its endpoints differ by more than
/// `max_angle_deg` or when it is longer than `length_factor` times the median
/// k-NN edge length. Components are ranked by size; the largest
/// [`SPLIT_SLOTS`] get slots, points of the rest join their nearest slotted
/// point.
#[derive(Clone, Copy, Debug)]
pub struct HeuristicSplit {
    pub k: usize,
    pub max_angle_deg: f64,
    pub length_factor: f64,
}

impl Default for HeuristicSplit {
    fn default() -> Self {
        HeuristicSplit {
            k: 8,
            max_angle_deg: 30.0,
            length_factor: 3.0,
        }
    }
}

impl HeuristicSplit {
    pub fn segment(&self, positions: &[Point3], normals: &[Point3]) -> Vec<u8> {
        let n = positions.len();
        if n == 0 {
            return Vec::new();
        }
        let tree = KdTree::new(positions.to_vec());
        let mut edges: Vec<(usize, usize, f64)> = Vec::with_capacity(n * self.k);
        for (i, p) in positions.iter().enumerate() {
            // the query point itself comes back first
            for (j, d2) in tree.k_nearest(*p, self.k + 1) {
                if j != i {
                    edges.push((i, j, d2.sqrt()));
                }
            }
        }
        let mut lengths: Vec<f64> = edges.iter().map(|e| e.2).collect();
        lengths.sort_by(f64::total_cmp);
        let median = lengths.get(lengths.len() / 2).copied().unwrap_or(0.0);
        let max_len = self.length_factor * median;
        let min_cos = self.max_angle_deg.to_radians().cos();

        let mut uf = UnionFind::new(n);
        for &(i, j, len) in &edges {
            if len <= max_len && dot(normals[i], normals[j]) >= min_cos {
                uf.union(i, j);
            }
        }

        let roots: Vec<usize> = (0..n).map(|i| uf.find(i)).collect();
        let mut sizes = std::collections::BTreeMap::<usize, usize>::new();
        for &r in &roots {
            *sizes.entry(r).or_default() += 1;
        }
        // roots are the smallest member index, so (size desc, root asc) is a
        // deterministic ranking
        let mut ranked: Vec<(usize, usize)> = sizes.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        let slot_of: std::collections::BTreeMap<usize, u8> = ranked
            .iter()
            .take(SPLIT_SLOTS)
            .enumerate()
            .map(|(s, &(root, _))| (root, s as u8))
            .collect();

        let mut out: Vec<Option<u8>> = roots.iter().map(|r| slot_of.get(r).copied()).collect();
        if out.iter().any(Option::is_none) {
            let kept: Vec<usize> = (0..n).filter(|&i| out[i].is_some()).collect();
            let kept_tree = KdTree::from_indices(positions, &kept);
            for i in 0..n {
                if out[i].is_none() {
                    let (near, _) = kept_tree.nearest(positions[i]).expect("kept slots");
                    out[i] = out[kept[near]];
                }
            }
        }
        out.into_iter().map(|s| s.unwrap_or(0)).collect()
    }
}

impl SplitOperator for HeuristicSplit {
    fn split(&mut self, _: &OpContext<'_>, req: &SplitRequest) -> Result<SplitResponse> {
        Ok(SplitResponse {
            labels: self.segment(&req.points.positions, &req.points.normals),
        })
    }
}

/// Answers the request's own inside/outside flags, leaving regions as they
/// are.
#[derive(Clone, Copy, Debug, Default)]
pub struct EchoFix;

impl FixOperator for EchoFix {
    fn fix(&mut self, _: &OpContext<'_>, req: &FixRequest) -> Result<FixResponse> {
        Ok(FixResponse {
            probs: req
                .inside
                .iter()
                .map(|&b| if b { 1.0 } else { 0.0 })
                .collect(),
        })
    }
}

/// Scores a pair by how well the mean normals of the two regions agree,
/// mapped from cosine to `[0, 1]`. Pairs with a vanishing mean normal score
/// 0.5.
#[derive(Clone, Copy, Debug, Default)]
pub struct NormalAgreementMerge;

impl MergeOperator for NormalAgreementMerge {
    fn merge(&mut self, _: &OpContext<'_>, req: &MergeRequest) -> Result<MergeResponse> {
        let mut sum_a = [0.0; 3];
        let mut sum_b = [0.0; 3];
        for (n, role) in req.points.normals.iter().zip(&req.roles) {
            match role {
                MergeRole::A => sum_a = add(sum_a, *n),
                MergeRole::B => sum_b = add(sum_b, *n),
                MergeRole::Outside => {}
            }
        }
        let (la, lb) = (norm(sum_a), norm(sum_b));
        let score = if la < 1e-9 || lb < 1e-9 {
            0.5
        } else {
            ((1.0 + dot(sum_a, sum_b) / (la * lb)) / 2.0).clamp(0.0, 1.0)
        };
        Ok(MergeResponse {
            score: score as f32,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn slabs() -> (Vec<Point3>, Vec<Point3>) {
        let mut pos = Vec::new();
        for z in [0.0, 0.5] {
            for i in 0..16 {
                for j in 0..16 {
                    pos.push([i as f64 * 0.02, j as f64 * 0.02, z]);
                }
            }
        }
        let normals = vec![[0.0, 0.0, 1.0]; pos.len()];
        (pos, normals)
    }

    fn fibonacci_sphere(n: usize) -> Vec<Point3> {
        let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
        (0..n)
            .map(|i| {
                let y = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
                let r = (1.0 - y * y).sqrt();
                let t = golden * i as f64;
                [r * t.cos(), y, r * t.sin()]
            })
            .collect()
    }

    #[test]
    fn parallel_slabs_give_two_slots() {
        let (pos, nrm) = slabs();
        let labels = HeuristicSplit::default().segment(&pos, &nrm);
        let distinct: HashSet<u8> = labels.iter().copied().collect();
        assert_eq!(distinct.len(), 2);
        assert!(labels[..256].iter().all(|&l| l == labels[0]));
        assert!(labels[256..].iter().all(|&l| l == labels[256]));
    }

    #[test]
    fn sphere_gives_one_slot() {
        let pos = fibonacci_sphere(512);
        let labels = HeuristicSplit::default().segment(&pos, &pos);
        assert!(labels.iter().all(|&l| l == 0));
    }

    #[test]
    fn deterministic() {
        let (pos, nrm) = slabs();
        let h = HeuristicSplit::default();
        assert_eq!(h.segment(&pos, &nrm), h.segment(&pos, &nrm));
    }

    #[test]
    fn overflow_components_fold_into_ten_slots() {
        // 12 well separated clusters of decreasing size
        let mut pos = Vec::new();
        for c in 0..12 {
            for k in 0..(20 - c) {
                pos.push([c as f64 * 10.0 + k as f64 * 0.01, 0.0, 0.0]);
            }
        }
        let nrm = vec![[0.0, 0.0, 1.0]; pos.len()];
        let labels = HeuristicSplit::default().segment(&pos, &nrm);
        let distinct: HashSet<u8> = labels.iter().copied().collect();
        assert_eq!(distinct.len(), SPLIT_SLOTS);
        assert!(labels.iter().all(|&l| (l as usize) < SPLIT_SLOTS));
    }
}
