//! Procedurally generated labeled shapes.
//!
//! A fixture is a gently curved height-field sheet sampled on a jittered
//! grid and cut into ground-truth parts by the Voronoi cells of well spread
//! seed points. Each part is a convex patch of the grid, so the points of a
//! part form one connected component under the default adjacency threshold
//! once the sheet is scaled into the unit ball.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geom::{dist2, normalize_unit_sphere, scale, Point3};
use crate::shape::Shape;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SheetSpec {
    pub points: usize,
    pub parts: usize,
    pub seed: u64,
}

/// Sheet over `[-1, 1] x [-0.5, 0.5]` with height `0.15 sin(2x) cos(3y)`.
pub fn labeled_sheet(id: impl Into<String>, spec: SheetSpec) -> Shape {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let nx = ((2.0 * spec.points as f64).sqrt().round() as usize).max(2);
    let ny = (spec.points.div_ceil(nx)).max(2);
    let (w, h) = (2.0, 1.0);
    let (dx, dy) = (w / (nx - 1) as f64, h / (ny - 1) as f64);
    let jitter = 0.05;

    let mut positions = Vec::with_capacity(nx * ny);
    let mut normals = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let x = -1.0 + i as f64 * dx + rng.random_range(-jitter..jitter) * dx;
            let y = -0.5 + j as f64 * dy + rng.random_range(-jitter..jitter) * dy;
            let z = 0.15 * (2.0 * x).sin() * (3.0 * y).cos();
            let gx = 0.3 * (2.0 * x).cos() * (3.0 * y).cos();
            let gy = -0.45 * (2.0 * x).sin() * (3.0 * y).sin();
            let n = [-gx, -gy, 1.0];
            let len = (n[0] * n[0] + n[1] * n[1] + 1.0).sqrt();
            positions.push([x, y, z]);
            normals.push(scale(n, 1.0 / len));
        }
    }

    let seeds = spread_seeds(&positions, spec.parts.max(1), &mut rng);
    let gt: Vec<u32> = positions
        .iter()
        .map(|p| {
            (0..seeds.len()).fold(0, |best, s| {
                if dist2(*p, seeds[s]) < dist2(*p, seeds[best]) {
                    s
                } else {
                    best
                }
            }) as u32
        })
        .collect();

    let (positions, _) = normalize_unit_sphere(&positions).expect("non-empty sheet");
    Shape::new(id, positions, normals, Some(gt)).expect("well-formed sheet")
}

/// Farthest-point spread of `k` seeds from a random start, with a small
/// random offset so parts are not a regular tiling.
fn spread_seeds(points: &[Point3], k: usize, rng: &mut ChaCha8Rng) -> Vec<Point3> {
    let mut seeds = vec![points[rng.random_range(0..points.len())]];
    let mut min_d: Vec<f64> = points.iter().map(|p| dist2(*p, seeds[0])).collect();
    while seeds.len() < k {
        // choose among the farthest tenth at random to vary part sizes
        let mut order: Vec<usize> = (0..points.len()).collect();
        order.sort_by(|&a, &b| min_d[b].total_cmp(&min_d[a]).then(a.cmp(&b)));
        let pick = order[rng.random_range(0..(points.len() / 10).max(1))];
        let s = points[pick];
        seeds.push(s);
        for (i, p) in points.iter().enumerate() {
            min_d[i] = min_d[i].min(dist2(*p, s));
        }
    }
    seeds
}

/// `count` sheets with point counts in `[min_points, max_points]` and part
/// counts in `[min_parts, max_parts]`, derived from `seed`.
pub fn sheet_suite(
    count: usize,
    (min_points, max_points): (usize, usize),
    (min_parts, max_parts): (usize, usize),
    seed: u64,
) -> Vec<Shape> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let spec = SheetSpec {
                points: rng.random_range(min_points..=max_points),
                parts: rng.random_range(min_parts..=max_parts),
                seed: rng.random(),
            };
            labeled_sheet(format!("sheet_{i:03}"), spec)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decomp::{adjacency, DEFAULT_ADJACENCY_THRESHOLD};
    use crate::geom::norm;
    use crate::region::RegionDecomposition;

    #[test]
    fn sheet_is_normalized_and_labeled() {
        let s = labeled_sheet(
            "a",
            SheetSpec {
                points: 5000,
                parts: 6,
                seed: 1,
            },
        );
        assert!(s.len() >= 5000);
        assert_eq!(s.gt_part_count(), Some(6));
        let r = s.positions.iter().map(|p| norm(*p)).fold(0.0, f64::max);
        assert!((r - 1.0).abs() < 1e-9);
    }

    #[test]
    fn parts_are_adjacency_connected() {
        let s = labeled_sheet(
            "a",
            SheetSpec {
                points: 5000,
                parts: 8,
                seed: 2,
            },
        );
        let gt = s.gt().unwrap();
        // treat every point as its own region: the adjacency graph then is the
        // point graph, and each part must be one component of it
        let singletons = RegionDecomposition::new("a", (0..s.len() as u32).collect()).unwrap();
        let g = adjacency(&s, &singletons, DEFAULT_ADJACENCY_THRESHOLD);
        let mut uf = crate::decomp::UnionFind::new(s.len());
        for &(a, b) in &g.pairs {
            if gt[a as usize] == gt[b as usize] {
                uf.union(a as usize, b as usize);
            }
        }
        let mut roots = std::collections::BTreeSet::new();
        for (i, &g) in gt.iter().enumerate() {
            roots.insert((g, uf.find(i)));
        }
        assert_eq!(roots.len(), 8);
    }

    #[test]
    fn suite_is_deterministic() {
        let a = sheet_suite(3, (5000, 6000), (4, 12), 9);
        let b = sheet_suite(3, (5000, 6000), (4, 12), 9);
        assert_eq!(a, b);
    }
}
