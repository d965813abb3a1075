//! Small vector helpers, unit-sphere normalization and point subsampling.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::shape::Shape;

pub type Point3 = [f64; 3];

/// Radii below this are treated as a single coincident point.
const DEGENERATE_RADIUS: f64 = 1e-12;

#[inline]
pub fn sub(a: Point3, b: Point3) -> Point3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn add(a: Point3, b: Point3) -> Point3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn scale(a: Point3, s: f64) -> Point3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

#[inline]
pub fn dot(a: Point3, b: Point3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn norm(a: Point3) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
pub fn dist2(a: Point3, b: Point3) -> f64 {
    let d = sub(a, b);
    dot(d, d)
}

#[inline]
pub fn dist(a: Point3, b: Point3) -> f64 {
    dist2(a, b).sqrt()
}

pub fn centroid<I>(points: I) -> Option<Point3>
where
    I: IntoIterator<Item = Point3>,
{
    let mut sum = [0.0; 3];
    let mut n = 0usize;
    for p in points {
        sum = add(sum, p);
        n += 1;
    }
    (n > 0).then(|| scale(sum, 1.0 / n as f64))
}

/// Center and radius of the bounding sphere around the centroid.
pub fn center_radius(points: &[Point3]) -> Option<(Point3, f64)> {
    let c = centroid(points.iter().copied())?;
    let r = points.iter().map(|p| dist(*p, c)).fold(0.0, f64::max);
    Some((c, r))
}

/// Similarity transform mapping a point set into the unit ball:
/// `normalized = (p - center) / scale`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transform {
    pub center: Point3,
    pub scale: f64,
}

impl Transform {
    pub const IDENTITY: Transform = Transform {
        center: [0.0; 3],
        scale: 1.0,
    };

    #[inline]
    pub fn apply(&self, p: Point3) -> Point3 {
        scale(sub(p, self.center), 1.0 / self.scale)
    }

    #[inline]
    pub fn invert(&self, q: Point3) -> Point3 {
        add(scale(q, self.scale), self.center)
    }
}

/// Centers a point set on its centroid and scales it so the farthest point
/// lies on the unit sphere. Coincident inputs keep scale 1.
pub fn normalize_unit_sphere(points: &[Point3]) -> Result<(Vec<Point3>, Transform)> {
    let (center, radius) = center_radius(points).ok_or(Error::EmptyPointSet)?;
    let scale = if radius > DEGENERATE_RADIUS {
        radius
    } else {
        1.0
    };
    let transform = Transform { center, scale };
    let out = points.iter().map(|p| transform.apply(*p)).collect();
    Ok((out, transform))
}

/// A region (or any indexed subset) of a shape, re-expressed in its own
/// unit-sphere frame. Indices may repeat when the subset was upsampled.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizedRegion {
    pub point_indices: Vec<usize>,
    pub positions: Vec<Point3>,
    pub normals: Vec<Point3>,
    pub transform: Transform,
}

impl NormalizedRegion {
    pub fn from_indices(shape: &Shape, indices: Vec<usize>) -> Result<Self> {
        let raw: Vec<Point3> = indices.iter().map(|&i| shape.positions[i]).collect();
        let (positions, transform) = normalize_unit_sphere(&raw)?;
        let normals = indices.iter().map(|&i| shape.normals[i]).collect();
        Ok(NormalizedRegion {
            point_indices: indices,
            positions,
            normals,
            transform,
        })
    }

    pub fn len(&self) -> usize {
        self.point_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.point_indices.is_empty()
    }

    /// Per-point `[x, y, z, nx, ny, nz]` in single precision.
    pub fn features(&self) -> Vec<[f32; 6]> {
        self.positions
            .iter()
            .zip(&self.normals)
            .map(|(p, n)| {
                [
                    p[0] as f32,
                    p[1] as f32,
                    p[2] as f32,
                    n[0] as f32,
                    n[1] as f32,
                    n[2] as f32,
                ]
            })
            .collect()
    }
}

/// Draws exactly `target` entries from `indices`: without replacement when
/// there are enough, otherwise every index once plus uniform draws with
/// replacement to fill the quota.
pub fn subsample_points<R: Rng + ?Sized>(
    indices: &[usize],
    target: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if indices.is_empty() {
        return Err(Error::EmptyIndices);
    }
    if target == 0 {
        return Err(Error::Config("subsample target must be at least 1".into()));
    }
    if indices.len() >= target {
        return Ok(index::sample(rng, indices.len(), target)
            .into_iter()
            .map(|k| indices[k])
            .collect());
    }
    let mut out = Vec::with_capacity(target);
    out.extend_from_slice(indices);
    while out.len() < target {
        out.push(indices[rng.random_range(0..indices.len())]);
    }
    Ok(out)
}
