//! Point-cloud shapes and the `SHRD1` text format.
//!
//! ```text
//! SHRD1 <N> <has_gt:0|1>
//! x y z nx ny nz [gt_label]     (N lines)
//! ```
//!
//! Blank lines and lines starting with `#` are ignored.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geom::{norm, normalize_unit_sphere, scale, Point3, Transform};

pub const SHRD1_MAGIC: &str = "SHRD1";

/// Normals shorter than this cannot be renormalized.
const MIN_NORMAL_LENGTH: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct Shape {
    pub id: String,
    pub positions: Vec<Point3>,
    pub normals: Vec<Point3>,
    /// Dense ground-truth instance ids `0..G`.
    pub gt_labels: Option<Vec<u32>>,
    pub gt_semantic: Option<Vec<u32>>,
}

impl Shape {
    /// Validates lengths, renormalizes normals and densifies instance labels.
    pub fn new(
        id: impl Into<String>,
        positions: Vec<Point3>,
        normals: Vec<Point3>,
        gt_labels: Option<Vec<u32>>,
    ) -> Result<Self> {
        if positions.is_empty() {
            return Err(Error::EmptyPointSet);
        }
        if positions.len() != normals.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} positions but {} normals",
                positions.len(),
                normals.len()
            )));
        }
        if let Some(gt) = &gt_labels {
            if gt.len() != positions.len() {
                return Err(Error::ShapeMismatch(format!(
                    "{} positions but {} gt labels",
                    positions.len(),
                    gt.len()
                )));
            }
        }
        if positions.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Format("non-finite position".into()));
        }
        let normals = normals
            .into_iter()
            .enumerate()
            .map(|(i, n)| {
                let len = norm(n);
                if !len.is_finite() || len < MIN_NORMAL_LENGTH {
                    Err(Error::Format(format!("degenerate normal at point {i}")))
                } else {
                    Ok(scale(n, 1.0 / len))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Shape {
            id: id.into(),
            positions,
            normals,
            gt_labels: gt_labels.map(|g| densify_labels(&g)),
            gt_semantic: None,
        })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn gt(&self) -> Result<&[u32]> {
        self.gt_labels.as_deref().ok_or(Error::MissingGroundTruth)
    }

    /// Number of ground-truth parts, if labeled.
    pub fn gt_part_count(&self) -> Option<usize> {
        self.gt_labels
            .as_ref()
            .map(|g| g.iter().map(|&l| l as usize + 1).max().unwrap_or(0))
    }

    /// Copy of the shape scaled into the unit ball around its centroid.
    pub fn normalized(&self) -> (Shape, Transform) {
        // non-empty by construction
        let (positions, t) = normalize_unit_sphere(&self.positions).expect("non-empty shape");
        let mut out = self.clone();
        out.positions = positions;
        (out, t)
    }

    pub fn parse_shrd1(id: impl Into<String>, text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));

        let (hline, header) = lines
            .next()
            .ok_or_else(|| Error::parse(1, "missing header"))?;
        let mut fields = header.split_whitespace();
        if fields.next() != Some(SHRD1_MAGIC) {
            return Err(Error::parse(hline, "expected SHRD1 magic"));
        }
        let n: usize = fields
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::parse(hline, "bad point count"))?;
        let has_gt = match fields.next() {
            Some("0") => false,
            Some("1") => true,
            _ => return Err(Error::parse(hline, "has_gt must be 0 or 1")),
        };
        if fields.next().is_some() {
            return Err(Error::parse(hline, "trailing header fields"));
        }
        if n == 0 {
            return Err(Error::EmptyPointSet);
        }

        let cap = n.min(1 << 16);
        let mut positions = Vec::with_capacity(cap);
        let mut normals = Vec::with_capacity(cap);
        let mut gt = Vec::with_capacity(if has_gt { cap } else { 0 });
        let want = if has_gt { 7 } else { 6 };
        for (lineno, line) in lines {
            if positions.len() == n {
                return Err(Error::parse(lineno, "more points than declared"));
            }
            let cols: Vec<&str> = line.split_whitespace().collect();
            if cols.len() != want {
                return Err(Error::parse(
                    lineno,
                    format!("expected {want} columns, found {}", cols.len()),
                ));
            }
            let mut v = [0.0f64; 6];
            for (slot, tok) in v.iter_mut().zip(&cols[..6]) {
                *slot = tok
                    .parse()
                    .map_err(|_| Error::parse(lineno, format!("bad number {tok:?}")))?;
                if !slot.is_finite() {
                    return Err(Error::parse(lineno, "non-finite value"));
                }
            }
            positions.push([v[0], v[1], v[2]]);
            normals.push([v[3], v[4], v[5]]);
            if has_gt {
                let label: u32 = cols[6]
                    .parse()
                    .map_err(|_| Error::parse(lineno, format!("bad label {:?}", cols[6])))?;
                gt.push(label);
            }
        }
        if positions.len() != n {
            return Err(Error::Format(format!(
                "declared {n} points, found {}",
                positions.len()
            )));
        }
        Shape::new(id, positions, normals, has_gt.then_some(gt))
    }

    pub fn to_shrd1(&self) -> String {
        let mut out = String::with_capacity(self.len() * 64);
        let has_gt = self.gt_labels.is_some();
        writeln!(out, "{SHRD1_MAGIC} {} {}", self.len(), has_gt as u8).unwrap();
        for i in 0..self.len() {
            let p = self.positions[i];
            let n = self.normals[i];
            write!(out, "{} {} {} {} {} {}", p[0], p[1], p[2], n[0], n[1], n[2]).unwrap();
            if let Some(gt) = &self.gt_labels {
                write!(out, " {}", gt[i]).unwrap();
            }
            out.push('\n');
        }
        out
    }

    /// Reads a `SHRD1` file; the shape id is the file stem.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        Shape::parse_shrd1(id, &text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_shrd1())?;
        Ok(())
    }
}

/// Order-preserving re-index of arbitrary ids onto `0..G`.
pub fn densify_labels(labels: &[u32]) -> Vec<u32> {
    let mut map = BTreeMap::new();
    for &l in labels {
        map.entry(l).or_insert(0u32);
    }
    for (dense, v) in map.values_mut().enumerate() {
        *v = dense as u32;
    }
    labels.iter().map(|l| map[l]).collect()
}
