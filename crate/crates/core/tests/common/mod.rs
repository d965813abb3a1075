#![allow(dead_code)]

use std::collections::BTreeSet;

use shred_core::geom::Point3;
use shred_core::Shape;

/// Purity by direct counting: for every region, the IoU against every part
/// is recomputed from scratch by scanning all points.
pub fn brute_purity(pred: &[u32], gt: &[u32]) -> f64 {
    let regions: BTreeSet<u32> = pred.iter().copied().collect();
    let parts: BTreeSet<u32> = gt.iter().copied().collect();
    let mut relabel = vec![0u32; pred.len()];
    for &r in &regions {
        let mut best = (f64::NEG_INFINITY, 0u32);
        for &g in &parts {
            let (mut inter, mut union) = (0usize, 0usize);
            for i in 0..pred.len() {
                let (a, b) = (pred[i] == r, gt[i] == g);
                inter += (a && b) as usize;
                union += (a || b) as usize;
            }
            let iou = inter as f64 / union as f64;
            if iou > best.0 {
                best = (iou, g);
            }
        }
        for i in 0..pred.len() {
            if pred[i] == r {
                relabel[i] = best.1;
            }
        }
    }
    let mut total = 0.0;
    for &g in &parts {
        let size = gt.iter().filter(|&&x| x == g).count();
        let kept = (0..gt.len())
            .filter(|&i| gt[i] == g && relabel[i] == g)
            .count();
        total += kept as f64 / size as f64;
    }
    total / parts.len() as f64
}

pub fn brute_aiou(pred: &[u32], gt: &[u32]) -> f64 {
    let regions: BTreeSet<u32> = pred.iter().copied().collect();
    let parts: BTreeSet<u32> = gt.iter().copied().collect();
    let mut total = 0.0;
    for &g in &parts {
        let mut best: f64 = 0.0;
        for &r in &regions {
            let (mut inter, mut union) = (0usize, 0usize);
            for i in 0..pred.len() {
                let (a, b) = (pred[i] == r, gt[i] == g);
                inter += (a && b) as usize;
                union += (a || b) as usize;
            }
            best = best.max(inter as f64 / union as f64);
        }
        total += best;
    }
    total / parts.len() as f64
}

/// Every permutation of `0..k`.
pub fn permutations(k: usize) -> Vec<Vec<usize>> {
    fn go(cur: &mut Vec<usize>, used: &mut Vec<bool>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == used.len() {
            out.push(cur.clone());
            return;
        }
        for i in 0..used.len() {
            if !used[i] {
                used[i] = true;
                cur.push(i);
                go(cur, used, out);
                cur.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    go(&mut Vec::new(), &mut vec![false; k], &mut out);
    out
}

/// Flat `n x n` grid patch on the plane through `origin` spanned by `u`, `v`.
pub fn patch(
    origin: Point3,
    u: Point3,
    v: Point3,
    n: usize,
    normal: Point3,
) -> (Vec<Point3>, Vec<Point3>) {
    let mut pos = Vec::new();
    for i in 0..n {
        for j in 0..n {
            let (s, t) = (i as f64 / (n - 1) as f64, j as f64 / (n - 1) as f64);
            pos.push([
                origin[0] + s * u[0] + t * v[0],
                origin[1] + s * u[1] + t * v[1],
                origin[2] + s * u[2] + t * v[2],
            ]);
        }
    }
    let normals = vec![normal; pos.len()];
    (pos, normals)
}

/// Builds a labeled shape from `(positions, normals, part)` pieces.
pub fn assemble(id: &str, pieces: Vec<(Vec<Point3>, Vec<Point3>, u32)>) -> Shape {
    let (mut p, mut n, mut g) = (Vec::new(), Vec::new(), Vec::new());
    for (pos, nor, part) in pieces {
        g.extend(std::iter::repeat_n(part, pos.len()));
        p.extend(pos);
        n.extend(nor);
    }
    Shape::new(id, p, n, Some(g)).unwrap().normalized().0
}

/// Three row-aligned slabs along x, one part each, spaced so neighbors are
/// adjacent at the default threshold and non-neighbors are not.
pub fn three_slab_chain() -> Shape {
    let up = [0.0, 0.0, 1.0];
    let pieces = (0..3)
        .map(|k| {
            let (p, n) = patch(
                [k as f64 * 1.02, 0.0, 0.0],
                [1.0, 0.0, 0.0],
                [0.0, 1.0, 0.0],
                20,
                up,
            );
            (p, n, k as u32)
        })
        .collect();
    assemble("chain", pieces)
}
