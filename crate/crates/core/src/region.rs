use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::shape::Shape;
use crate::spatial::KdTree;

/// Per-point region assignment partitioning a shape.
///
/// Region ids are arbitrary non-negative integers; `next_id` is always
/// larger than every id in use so fresh ids never collide.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionDecomposition {
    pub shape_id: String,
    pub labels: Vec<u32>,
    pub next_id: u32,
}

impl RegionDecomposition {
    pub fn new(shape_id: impl Into<String>, labels: Vec<u32>) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::EmptyPointSet);
        }
        let max = labels.iter().copied().max().unwrap_or(0);
        let next_id = max
            .checked_add(1)
            .ok_or_else(|| Error::InvalidDecomposition("region id overflow".into()))?;
        Ok(RegionDecomposition {
            shape_id: shape_id.into(),
            labels,
            next_id,
        })
    }

    /// The ground-truth decomposition R* of a labeled shape.
    pub fn from_ground_truth(shape: &Shape) -> Result<Self> {
        RegionDecomposition::new(shape.id.clone(), shape.gt()?.to_vec())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Point indices per region, ascending by region id then point index.
    pub fn regions(&self) -> BTreeMap<u32, Vec<usize>> {
        let mut map: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        for (i, &l) in self.labels.iter().enumerate() {
            map.entry(l).or_default().push(i);
        }
        map
    }

    pub fn region_ids(&self) -> Vec<u32> {
        self.regions().into_keys().collect()
    }

    pub fn region_count(&self) -> usize {
        let mut ids = self.labels.clone();
        ids.sort_unstable();
        ids.dedup();
        ids.len()
    }

    pub fn members(&self, region: u32) -> Result<Vec<usize>> {
        let m: Vec<usize> = (0..self.labels.len())
            .filter(|&i| self.labels[i] == region)
            .collect();
        if m.is_empty() {
            Err(Error::UnknownRegion(region))
        } else {
            Ok(m)
        }
    }

    pub fn fresh_id(&mut self) -> u32 {
        let id = self.next_id;
        self.next_id += 1;
        id
    }

    /// Checks the partition invariants against a shape of `n` points.
    pub fn validate(&self, n: usize) -> Result<()> {
        if self.labels.len() != n {
            return Err(Error::InvalidDecomposition(format!(
                "{} labels for {n} points",
                self.labels.len()
            )));
        }
        if let Some(&bad) = self.labels.iter().find(|&&l| l >= self.next_id) {
            return Err(Error::InvalidDecomposition(format!(
                "region id {bad} not below next_id {}",
                self.next_id
            )));
        }
        Ok(())
    }

    /// Labels renumbered by first appearance; equal for decompositions that
    /// describe the same partition.
    pub fn canonical_labels(&self) -> Vec<u32> {
        canonicalize(&self.labels)
    }
}

pub fn canonicalize(labels: &[u32]) -> Vec<u32> {
    let mut map = std::collections::HashMap::new();
    labels
        .iter()
        .map(|l| {
            let next = map.len() as u32;
            *map.entry(*l).or_insert(next)
        })
        .collect()
}

pub fn same_partition(a: &[u32], b: &[u32]) -> bool {
    a.len() == b.len() && canonicalize(a) == canonicalize(b)
}

/// Minimum Euclidean distance between any point of `a` and any point of `b`.
pub fn min_region_distance(
    shape: &Shape,
    decomp: &RegionDecomposition,
    a: u32,
    b: u32,
) -> Result<f64> {
    let ma = decomp.members(a)?;
    let mb = decomp.members(b)?;
    if a == b {
        return Ok(0.0);
    }
    // index the larger side
    let (query, indexed) = if ma.len() <= mb.len() {
        (ma, mb)
    } else {
        (mb, ma)
    };
    let tree = KdTree::from_indices(&shape.positions, &indexed);
    let best = query
        .iter()
        .filter_map(|&i| tree.nearest(shape.positions[i]))
        .map(|(_, d2)| d2)
        .fold(f64::INFINITY, f64::min);
    Ok(best.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::dist;
    use proptest::prelude::*;

    fn line_shape(points: Vec<[f64; 3]>) -> Shape {
        let n = points.len();
        Shape::new("t", points, vec![[0.0, 0.0, 1.0]; n], None).unwrap()
    }

    #[test]
    fn self_distance_zero() {
        let s = line_shape(vec![[0.0; 3], [1.0, 0.0, 0.0]]);
        let d = RegionDecomposition::new("t", vec![0, 0]).unwrap();
        assert_eq!(min_region_distance(&s, &d, 0, 0).unwrap(), 0.0);
    }

    #[test]
    fn singleton_distance() {
        let s = line_shape(vec![[0.0; 3], [0.0, 0.0, 1.0]]);
        let d = RegionDecomposition::new("t", vec![0, 1]).unwrap();
        assert_eq!(min_region_distance(&s, &d, 0, 1).unwrap(), 1.0);
        assert!(matches!(
            min_region_distance(&s, &d, 0, 5),
            Err(Error::UnknownRegion(5))
        ));
    }

    #[test]
    fn partition_helpers() {
        let d = RegionDecomposition::new("t", vec![4, 4, 9, 2]).unwrap();
        assert_eq!(d.next_id, 10);
        assert_eq!(d.region_ids(), vec![2, 4, 9]);
        assert_eq!(d.region_count(), 3);
        assert!(same_partition(&d.labels, &[0, 0, 1, 2]));
        assert!(!same_partition(&d.labels, &[0, 1, 1, 2]));
        d.validate(4).unwrap();
        assert!(d.validate(5).is_err());
    }

    proptest! {
        #[test]
        fn min_distance_matches_double_loop(
            pts in prop::collection::vec(prop::array::uniform3(-1.0f64..1.0), 2..100),
            split in 1usize..50,
        ) {
            let n = pts.len();
            let split = split.min(n - 1);
            let labels: Vec<u32> = (0..n).map(|i| (i >= split) as u32).collect();
            let s = line_shape(pts.clone());
            let d = RegionDecomposition::new("t", labels).unwrap();
            let mut brute = f64::INFINITY;
            for i in 0..split {
                for j in split..n {
                    brute = brute.min(dist(pts[i], pts[j]));
                }
            }
            let fast = min_region_distance(&s, &d, 0, 1).unwrap();
            prop_assert!((fast - brute).abs() <= 1e-9);
            prop_assert_eq!(fast, min_region_distance(&s, &d, 1, 0).unwrap());
        }
    }
}
