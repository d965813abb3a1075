//! Fixed-size operator requests.
//!
//! Requests keep the original point indices next to the normalized features
//! so responses can be mapped back onto the shape, and so a request can be
//! fingerprinted for replay.

use rand::Rng;

use crate::error::Result;
use crate::geom::{center_radius, dist2, subsample_points, NormalizedRegion, Point3};
use crate::shape::Shape;
use crate::spatial::KdTree;

pub const SPLIT_POINTS: usize = 512;
pub const FIX_SIDE_POINTS: usize = 2048;
pub const MERGE_REGION_POINTS: usize = 512;
pub const MERGE_OUTSIDE_POINTS: usize = 1024;

/// 64-bit FNV-1a over the sorted indices, each as little-endian `u64`.
pub fn request_digest(indices: &[usize]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut sorted = indices.to_vec();
    sorted.sort_unstable();
    let mut h = OFFSET;
    for i in sorted {
        for b in (i as u64).to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(PRIME);
        }
    }
    h
}

pub fn digest_hex(d: u64) -> String {
    format!("{d:016x}")
}

#[derive(Clone, Debug, PartialEq)]
pub struct SplitRequest {
    pub region: u32,
    pub points: NormalizedRegion,
}

impl SplitRequest {
    pub fn build<R: Rng + ?Sized>(
        shape: &Shape,
        region: u32,
        members: &[usize],
        rng: &mut R,
    ) -> Result<Self> {
        let sample = subsample_points(members, SPLIT_POINTS, rng)?;
        Ok(SplitRequest {
            region,
            points: NormalizedRegion::from_indices(shape, sample)?,
        })
    }

    pub fn digest(&self) -> u64 {
        request_digest(&self.points.point_indices)
    }
}

/// Inside samples first, then outside samples. `inside[i]` is the request's
/// membership flag for point `i`.
#[derive(Clone, Debug, PartialEq)]
pub struct FixRequest {
    pub region: u32,
    pub points: NormalizedRegion,
    pub inside: Vec<bool>,
    /// Outside samples were drawn from the region's own boundary because no
    /// foreign point lay within the extended radius.
    pub boundary_fallback: bool,
}

/// A fix request plus the full candidate set it was sampled from.
#[derive(Clone, Debug)]
pub struct FixNeighborhood {
    pub request: FixRequest,
    pub outside_candidates: Vec<usize>,
}

impl FixRequest {
    /// `labels` is the current per-point region assignment; outside
    /// candidates are foreign points within `center radius + extra_radius`.
    pub fn build<R: Rng + ?Sized>(
        shape: &Shape,
        tree: &KdTree,
        labels: &[u32],
        region: u32,
        members: &[usize],
        extra_radius: f64,
        rng: &mut R,
    ) -> Result<FixNeighborhood> {
        let (candidates, center) =
            outside_candidates(shape, tree, members, extra_radius, |i| labels[i] != region)?;
        let inside_sample = subsample_points(members, FIX_SIDE_POINTS, rng)?;
        let (outside_sample, fallback) = if candidates.is_empty() {
            let boundary = boundary_points(shape, members, center);
            log::warn!(
                "shape {}: region {region} has no outside points within radius, using boundary",
                shape.id
            );
            (subsample_points(&boundary, FIX_SIDE_POINTS, rng)?, true)
        } else {
            (subsample_points(&candidates, FIX_SIDE_POINTS, rng)?, false)
        };
        let mut indices = inside_sample;
        indices.extend_from_slice(&outside_sample);
        let inside = (0..indices.len()).map(|k| k < FIX_SIDE_POINTS).collect();
        Ok(FixNeighborhood {
            request: FixRequest {
                region,
                points: NormalizedRegion::from_indices(shape, indices)?,
                inside,
                boundary_fallback: fallback,
            },
            outside_candidates: candidates,
        })
    }

    pub fn digest(&self) -> u64 {
        request_digest(&self.points.point_indices)
    }

    /// Per-point `[x, y, z, nx, ny, nz, inside]`.
    pub fn features(&self) -> Vec<[f32; 7]> {
        self.points
            .features()
            .into_iter()
            .zip(&self.inside)
            .map(|(f, &ins)| [f[0], f[1], f[2], f[3], f[4], f[5], ins as u8 as f32])
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MergeRole {
    A,
    B,
    Outside,
}

/// 512 points of region `a`, 512 of region `b`, 1024 nearby outside points,
/// in that order.
#[derive(Clone, Debug, PartialEq)]
pub struct MergeRequest {
    pub region_a: u32,
    pub region_b: u32,
    pub points: NormalizedRegion,
    pub roles: Vec<MergeRole>,
    pub boundary_fallback: bool,
}

impl MergeRequest {
    #[allow(clippy::too_many_arguments)]
    pub fn build<R: Rng + ?Sized>(
        shape: &Shape,
        tree: &KdTree,
        labels: &[u32],
        (region_a, members_a): (u32, &[usize]),
        (region_b, members_b): (u32, &[usize]),
        extra_radius: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let mut union = members_a.to_vec();
        union.extend_from_slice(members_b);
        let (candidates, center) = outside_candidates(shape, tree, &union, extra_radius, |i| {
            labels[i] != region_a && labels[i] != region_b
        })?;
        let mut indices = subsample_points(members_a, MERGE_REGION_POINTS, rng)?;
        indices.extend(subsample_points(members_b, MERGE_REGION_POINTS, rng)?);
        let fallback = candidates.is_empty();
        let pool = if fallback {
            log::warn!(
                "shape {}: merge pair ({region_a}, {region_b}) has no outside points within radius, using boundary",
                shape.id
            );
            boundary_points(shape, &union, center)
        } else {
            candidates
        };
        indices.extend(subsample_points(&pool, MERGE_OUTSIDE_POINTS, rng)?);
        let roles = (0..indices.len())
            .map(|k| match k {
                k if k < MERGE_REGION_POINTS => MergeRole::A,
                k if k < 2 * MERGE_REGION_POINTS => MergeRole::B,
                _ => MergeRole::Outside,
            })
            .collect();
        Ok(MergeRequest {
            region_a,
            region_b,
            points: NormalizedRegion::from_indices(shape, indices)?,
            roles,
            boundary_fallback: fallback,
        })
    }

    pub fn digest(&self) -> u64 {
        request_digest(&self.points.point_indices)
    }

    /// Per-point `[x, y, z, nx, ny, nz, in_a, in_b]`.
    pub fn features(&self) -> Vec<[f32; 8]> {
        self.points
            .features()
            .into_iter()
            .zip(&self.roles)
            .map(|(f, role)| {
                let (a, b) = match role {
                    MergeRole::A => (1.0, 0.0),
                    MergeRole::B => (0.0, 1.0),
                    MergeRole::Outside => (0.0, 0.0),
                };
                [f[0], f[1], f[2], f[3], f[4], f[5], a, b]
            })
            .collect()
    }
}

/// Points accepted by `is_outside` within the bounding sphere of `members`
/// grown by `extra_radius`, sorted by index. Also returns the sphere center.
pub(crate) fn outside_candidates(
    shape: &Shape,
    tree: &KdTree,
    members: &[usize],
    extra_radius: f64,
    is_outside: impl Fn(usize) -> bool,
) -> Result<(Vec<usize>, Point3)> {
    let pts: Vec<Point3> = members.iter().map(|&i| shape.positions[i]).collect();
    let (center, radius) = center_radius(&pts).ok_or(crate::Error::EmptyIndices)?;
    let found = tree
        .within_radius(center, radius + extra_radius)
        .into_iter()
        .filter(|&i| is_outside(i))
        .collect();
    Ok((found, center))
}

/// Outermost tenth (at least one point) of `members` by distance from
/// `center`.
pub(crate) fn boundary_points(shape: &Shape, members: &[usize], center: Point3) -> Vec<usize> {
    let mut by_dist: Vec<(f64, usize)> = members
        .iter()
        .map(|&i| (dist2(shape.positions[i], center), i))
        .collect();
    by_dist.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let keep = (members.len() / 10).max(1);
    by_dist.into_iter().take(keep).map(|(_, i)| i).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::region::RegionDecomposition;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn grid_shape(n: usize) -> Shape {
        let pts: Vec<Point3> = (0..n)
            .map(|i| [(i % 40) as f64 * 0.01, (i / 40) as f64 * 0.01, 0.0])
            .collect();
        Shape::new("g", pts, vec![[0.0, 0.0, 1.0]; n], None).unwrap()
    }

    #[test]
    fn digest_is_order_independent() {
        assert_eq!(request_digest(&[3, 1, 2]), request_digest(&[1, 2, 3]));
        assert_ne!(request_digest(&[1, 2, 3]), request_digest(&[1, 2, 4]));
        // FNV-1a of the empty input is the offset basis
        assert_eq!(digest_hex(request_digest(&[])), "cbf29ce484222325");
    }

    #[test]
    fn digest_known_value() {
        // FNV-1a 64 of the 8 bytes 01 00 00 00 00 00 00 00
        let mut h: u64 = 0xcbf29ce484222325;
        for b in [1u8, 0, 0, 0, 0, 0, 0, 0] {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
        assert_eq!(request_digest(&[1]), h);
    }

    #[test]
    fn fix_request_shape() {
        let s = grid_shape(1600);
        let labels: Vec<u32> = (0..1600).map(|i| ((i % 40) >= 20) as u32).collect();
        let d = RegionDecomposition::new("g", labels).unwrap();
        let tree = KdTree::new(s.positions.clone());
        let members = d.members(0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let nb = FixRequest::build(&s, &tree, &d.labels, 0, &members, 0.1, &mut rng).unwrap();
        let req = nb.request;
        assert_eq!(req.points.len(), 2 * FIX_SIDE_POINTS);
        assert_eq!(req.inside.iter().filter(|&&b| b).count(), FIX_SIDE_POINTS);
        for (k, &i) in req.points.point_indices.iter().enumerate() {
            assert_eq!(d.labels[i] == 0, req.inside[k]);
        }
        assert!(!req.boundary_fallback);
        let r = req
            .points
            .positions
            .iter()
            .map(|p| crate::geom::norm(*p))
            .fold(0.0, f64::max);
        assert!(r <= 1.0 + 1e-6);
        assert_eq!(req.features()[0][6], 1.0);
    }

    #[test]
    fn fix_request_boundary_fallback() {
        let s = grid_shape(100);
        let d = RegionDecomposition::new("g", vec![0; 100]).unwrap();
        let tree = KdTree::new(s.positions.clone());
        let members = d.members(0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let nb = FixRequest::build(&s, &tree, &d.labels, 0, &members, 0.1, &mut rng).unwrap();
        assert!(nb.request.boundary_fallback);
        assert_eq!(nb.request.points.len(), 2 * FIX_SIDE_POINTS);
        assert!(nb.outside_candidates.is_empty());
    }

    #[test]
    fn merge_request_composition() {
        let s = grid_shape(1600);
        let labels: Vec<u32> = (0..1600).map(|i| ((i % 40) / 10) as u32).collect();
        let d = RegionDecomposition::new("g", labels).unwrap();
        let tree = KdTree::new(s.positions.clone());
        let (ma, mb) = (d.members(1).unwrap(), d.members(2).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let req =
            MergeRequest::build(&s, &tree, &d.labels, (1, &ma), (2, &mb), 0.1, &mut rng).unwrap();
        assert_eq!(req.points.len(), 2048);
        let count = |r: MergeRole| req.roles.iter().filter(|&&x| x == r).count();
        assert_eq!(count(MergeRole::A), 512);
        assert_eq!(count(MergeRole::B), 512);
        assert_eq!(count(MergeRole::Outside), 1024);
        for (k, &i) in req.points.point_indices.iter().enumerate() {
            let expect = match d.labels[i] {
                1 => MergeRole::A,
                2 => MergeRole::B,
                _ => MergeRole::Outside,
            };
            assert_eq!(req.roles[k], expect);
        }
        let f = req.features();
        assert_eq!(&f[0][6..], &[1.0, 0.0]);
        assert_eq!(&f[600][6..], &[0.0, 1.0]);
        assert_eq!(&f[2000][6..], &[0.0, 0.0]);
    }
}
