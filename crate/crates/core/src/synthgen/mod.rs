//! Synthetic training examples for the split, fix and merge operators.

pub mod shard;

use std::collections::{BTreeMap, BTreeSet, HashSet};

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::decomp::{
    cross_point_pairs, fps_cluster, pairs_from_points, DEFAULT_ADJACENCY_THRESHOLD,
};
use crate::error::{Error, Result};
use crate::geom::{add, center_radius, dist2, subsample_points, NormalizedRegion, Point3};
use crate::matching::{overseg_match, plain_match, InstanceMatrix, MatchResult};
use crate::operators::oracle::{best_overlap_part, slot_targets};
use crate::operators::requests::{boundary_points, FIX_SIDE_POINTS};
use crate::operators::{MergeRequest, OpKind, SplitRequest, SPLIT_SLOTS};
use crate::region::RegionDecomposition;
use crate::shape::Shape;
use crate::spatial::KdTree;

#[derive(Clone, Debug, PartialEq)]
pub struct SplitExample {
    pub region: u32,
    pub point_indices: Vec<usize>,
    pub features: Vec<[f32; 6]>,
    /// Dense slot ids from 0, at most [`SPLIT_SLOTS`] distinct.
    pub targets: Vec<u8>,
}

impl SplitExample {
    /// Training targets aligned to a prediction, with or without the
    /// over-segmentation rewrite.
    pub fn match_targets(&self, logits: &InstanceMatrix, overseg: bool) -> Result<MatchResult> {
        let labels: Vec<usize> = self.targets.iter().map(|&t| t as usize).collect();
        let target = InstanceMatrix::one_hot(&labels, SPLIT_SLOTS)?;
        if overseg {
            overseg_match(logits, &target)
        } else {
            plain_match(logits, &target)
        }
    }
}

/// Training labels in prediction-slot space for a split shard record, given
/// the network's row-major `n_points x SPLIT_SLOTS` logits on it.
pub fn matched_split_labels(
    record: &shard::ShardRecord,
    logits: &[f32],
    overseg: bool,
) -> Result<Vec<u8>> {
    if record.kind != OpKind::Split {
        return Err(Error::Config(format!(
            "matching needs a split record, got {}",
            record.kind
        )));
    }
    let n = record.n_points;
    if logits.len() != n * SPLIT_SLOTS {
        return Err(Error::ShapeMismatch(format!(
            "{} logits for {n} points x {SPLIT_SLOTS} slots",
            logits.len()
        )));
    }
    let pred = InstanceMatrix::logits(n, SPLIT_SLOTS, logits.iter().map(|&v| v as f64).collect())?;
    let labels: Vec<usize> = record.labels.iter().map(|&t| t as usize).collect();
    let target = InstanceMatrix::one_hot(&labels, SPLIT_SLOTS)?;
    let m = if overseg {
        overseg_match(&pred, &target)?
    } else {
        plain_match(&pred, &target)?
    };
    // square matrices match every target column, so every row gets a slot
    Ok(m.pred_slot_targets().into_iter().map(|s| s as u8).collect())
}

/// One example per FPS region, targets from the ground-truth instances
/// present in the region.
pub fn gen_split_examples(shape: &Shape, fps_k: usize, seed: u64) -> Result<Vec<SplitExample>> {
    let gt = shape.gt()?;
    let decomp = fps_cluster(shape, fps_k, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    decomp
        .regions()
        .into_iter()
        .map(|(region, members)| {
            let req = SplitRequest::build(shape, region, &members, &mut rng)?;
            let targets = slot_targets(
                &req.points.point_indices,
                &req.points.positions,
                gt,
                SPLIT_SLOTS,
            );
            Ok(SplitExample {
                region,
                features: req.points.features(),
                point_indices: req.points.point_indices,
                targets,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FixGenParams {
    pub grow_prob: f64,
    /// Growth as a fraction of the region size, drawn uniformly.
    pub grow_range: (f64, f64),
    pub shrink_prob: f64,
    pub shrink_range: (f64, f64),
    /// Per-example flag flip rate is drawn uniformly from `[0, max_flip]`.
    pub max_flip: f64,
    /// Chance that an inside point left out by downsampling joins the
    /// outside pool.
    pub surplus_flip_prob: f64,
    pub radius: f64,
    /// Minimum inside precision and recall of the flags against the targets.
    pub gate: f64,
}

impl Default for FixGenParams {
    fn default() -> Self {
        FixGenParams {
            grow_prob: 0.75,
            grow_range: (0.05, 0.25),
            shrink_prob: 0.75,
            shrink_range: (0.10, 0.50),
            max_flip: 0.3,
            surplus_flip_prob: 0.1,
            radius: 0.1,
            gate: 0.4,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FixExample {
    pub gt_part: u32,
    pub target_part: u32,
    pub point_indices: Vec<usize>,
    /// `[x, y, z, nx, ny, nz, flag]`; first half sampled inside, second half
    /// outside (flags may have been flipped since).
    pub features: Vec<[f32; 7]>,
    pub targets: Vec<u8>,
    pub gates: GateScores,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GateScores {
    /// Share of inside-flagged points whose target is inside.
    pub precision: f64,
    /// Share of inside-target points that are flagged inside.
    pub recall: f64,
}

impl GateScores {
    pub fn compute(flags: &[bool], targets: &[bool]) -> Self {
        let both = flags
            .iter()
            .zip(targets)
            .filter(|(f, t)| **f && **t)
            .count() as f64;
        let flagged = flags.iter().filter(|f| **f).count() as f64;
        let target = targets.iter().filter(|t| **t).count() as f64;
        let ratio = |a: f64, b: f64| if b > 0.0 { a / b } else { 0.0 };
        GateScores {
            precision: ratio(both, flagged),
            recall: ratio(both, target),
        }
    }

    pub fn passes(&self, gate: f64) -> bool {
        self.precision >= gate && self.recall >= gate
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum FixOutcome {
    Accepted(FixExample),
    Rejected(GateScores),
}

fn perturbed_center<R: Rng + ?Sized>(shape: &Shape, members: &[usize], rng: &mut R) -> Point3 {
    let pts: Vec<Point3> = members.iter().map(|&i| shape.positions[i]).collect();
    let (c, r) = center_radius(&pts).expect("non-empty region");
    let sigma = (r / 2.0).max(f64::MIN_POSITIVE);
    let normal = Normal::new(0.0, sigma).expect("positive sigma");
    add(
        c,
        [normal.sample(rng), normal.sample(rng), normal.sample(rng)],
    )
}

/// Indices sorted by distance to `p`, ties by index.
fn by_distance(shape: &Shape, indices: &[usize], p: Point3) -> Vec<usize> {
    let mut v: Vec<(f64, usize)> = indices
        .iter()
        .map(|&i| (dist2(shape.positions[i], p), i))
        .collect();
    v.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    v.into_iter().map(|(_, i)| i).collect()
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    lo + rng.random::<f64>() * (hi - lo)
}

/// One fix-network example from a randomly corrupted ground-truth part.
pub fn gen_fix_example<R: Rng + ?Sized>(
    shape: &Shape,
    tree: &KdTree,
    rng: &mut R,
    params: &FixGenParams,
) -> Result<FixOutcome> {
    let gt = shape.gt()?;
    let parts = shape.gt_part_count().unwrap_or(0) as u32;
    let part = rng.random_range(0..parts);
    let mut inside: Vec<bool> = gt.iter().map(|&g| g == part).collect();
    let members = |mask: &[bool]| -> Vec<usize> { (0..mask.len()).filter(|&i| mask[i]).collect() };

    if rng.random::<f64>() < params.grow_prob {
        let frac = uniform(rng, params.grow_range);
        let current = members(&inside);
        let seed = perturbed_center(shape, &current, rng);
        let outside: Vec<usize> = (0..inside.len()).filter(|&i| !inside[i]).collect();
        let count = (frac * current.len() as f64).round() as usize;
        for i in by_distance(shape, &outside, seed).into_iter().take(count) {
            inside[i] = true;
        }
    }
    if rng.random::<f64>() < params.shrink_prob {
        let frac = uniform(rng, params.shrink_range);
        let current = members(&inside);
        let seed = perturbed_center(shape, &current, rng);
        let count = ((frac * current.len() as f64).round() as usize).min(current.len() - 1);
        for i in by_distance(shape, &current, seed).into_iter().take(count) {
            inside[i] = false;
        }
    }

    let region = members(&inside);
    let pts: Vec<Point3> = region.iter().map(|&i| shape.positions[i]).collect();
    let (center, radius) = center_radius(&pts).expect("non-empty region");

    let inside_sample = subsample_points(&region, FIX_SIDE_POINTS, rng)?;
    let mut pool: Vec<usize> = tree
        .within_radius(center, radius + params.radius)
        .into_iter()
        .filter(|&i| !inside[i])
        .collect();
    if region.len() > FIX_SIDE_POINTS {
        let chosen: HashSet<usize> = inside_sample.iter().copied().collect();
        for &i in &region {
            if !chosen.contains(&i) && rng.random::<f64>() < params.surplus_flip_prob {
                pool.push(i);
            }
        }
    }
    if pool.is_empty() {
        pool = boundary_points(shape, &region, center);
    }
    let outside_sample = subsample_points(&pool, FIX_SIDE_POINTS, rng)?;

    let mut indices = inside_sample;
    indices.extend(outside_sample);
    let flip = rng.random::<f64>() * params.max_flip;
    let flags: Vec<bool> = (0..indices.len())
        .map(|k| {
            let f = k < FIX_SIDE_POINTS;
            if rng.random::<f64>() < flip {
                !f
            } else {
                f
            }
        })
        .collect();

    let target_part = best_overlap_part(&region, gt).expect("non-empty region");
    let targets: Vec<bool> = indices.iter().map(|&i| gt[i] == target_part).collect();
    let gates = GateScores::compute(&flags, &targets);
    if !gates.passes(params.gate) {
        return Ok(FixOutcome::Rejected(gates));
    }

    let norm = NormalizedRegion::from_indices(shape, indices)?;
    let features = norm
        .features()
        .into_iter()
        .zip(&flags)
        .map(|(f, &fl)| [f[0], f[1], f[2], f[3], f[4], f[5], fl as u8 as f32])
        .collect();
    Ok(FixOutcome::Accepted(FixExample {
        gt_part: part,
        target_part,
        point_indices: norm.point_indices,
        features,
        targets: targets.into_iter().map(u8::from).collect(),
        gates,
    }))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MergeGenParams {
    pub region_counts: Vec<usize>,
    pub max_k: usize,
    /// Chance of carrying out a sampled merge that should happen.
    pub execute_positive: f64,
    /// Chance of carrying out a sampled merge that should not happen.
    pub execute_negative: f64,
    pub outside_radius: f64,
    pub adjacency_threshold: f64,
}

impl Default for MergeGenParams {
    fn default() -> Self {
        MergeGenParams {
            region_counts: vec![16, 32, 64, 128],
            max_k: 10,
            execute_positive: 0.75,
            execute_negative: 0.25,
            outside_radius: 0.1,
            adjacency_threshold: DEFAULT_ADJACENCY_THRESHOLD,
        }
    }
}

/// Draws `K` in `1..=max_k` with probability proportional to `0.5^K`.
pub fn sample_k<R: Rng + ?Sized>(rng: &mut R, max_k: usize) -> usize {
    let weights: Vec<f64> = (1..=max_k).map(|k| 0.5f64.powi(k as i32)).collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (k, w) in weights.iter().enumerate() {
        if u < *w {
            return k + 1;
        }
        u -= w;
    }
    max_k
}

#[derive(Clone, Debug, PartialEq)]
pub struct MergeExample {
    pub region_a: u32,
    pub region_b: u32,
    pub best_a: u32,
    pub best_b: u32,
    pub point_indices: Vec<usize>,
    pub features: Vec<[f32; 8]>,
    pub target: bool,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MergeGenStats {
    pub positive: usize,
    pub positive_executed: usize,
    pub negative: usize,
    pub negative_executed: usize,
}

impl MergeGenStats {
    pub fn absorb(&mut self, other: &MergeGenStats) {
        self.positive += other.positive;
        self.positive_executed += other.positive_executed;
        self.negative += other.negative;
        self.negative_executed += other.negative_executed;
    }
}

#[derive(Clone, Debug)]
pub struct MergeGenOutput {
    pub initial: RegionDecomposition,
    pub examples: Vec<MergeExample>,
    pub stats: MergeGenStats,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
enum Group {
    Default,
    Shared(usize),
    PerInstance(u32, usize),
}

/// Annotation-aware over-segmentation of an FPS decomposition: every ground
/// truth instance inside an FPS region is cut into `K` Voronoi sub-parts,
/// and each sub-part joins the region's default group, one of `K` groups
/// shared across the region, or one of `K` groups private to its instance,
/// each with probability 1/3.
pub fn synthetic_oversegmentation<R: Rng + ?Sized>(
    shape: &Shape,
    rng: &mut R,
    params: &MergeGenParams,
) -> Result<RegionDecomposition> {
    let m = params.region_counts[rng.random_range(0..params.region_counts.len())];
    let fps = fps_cluster(shape, m, rng.random())?;
    oversegment(shape, &fps, rng, params.max_k)
}

/// Sub-part grouping of an existing decomposition; every output region lies
/// inside one region of `base`.
pub fn oversegment<R: Rng + ?Sized>(
    shape: &Shape,
    base: &RegionDecomposition,
    rng: &mut R,
    max_k: usize,
) -> Result<RegionDecomposition> {
    let gt = shape.gt()?;
    let mut groups: BTreeMap<(u32, Group), u32> = BTreeMap::new();
    let mut labels = vec![0u32; shape.len()];
    for (region, members) in base.regions() {
        let mut instances: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        for &i in &members {
            instances.entry(gt[i]).or_default().push(i);
        }
        for (inst, pts) in instances {
            let k = sample_k(rng, max_k);
            let seeds: Vec<usize> = index::sample(rng, pts.len(), k.min(pts.len()))
                .into_iter()
                .map(|s| pts[s])
                .collect();
            let mut sub: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
            for &i in &pts {
                let p = shape.positions[i];
                let nearest = (0..seeds.len()).fold(0, |b, s| {
                    if dist2(p, shape.positions[seeds[s]]) < dist2(p, shape.positions[seeds[b]]) {
                        s
                    } else {
                        b
                    }
                });
                sub.entry(nearest).or_default().push(i);
            }
            for (_, part) in sub {
                let group = match rng.random_range(0..3) {
                    0 => Group::Default,
                    1 => Group::Shared(rng.random_range(0..k)),
                    _ => Group::PerInstance(inst, rng.random_range(0..k)),
                };
                let next = groups.len() as u32;
                let id = *groups.entry((region, group)).or_insert(next);
                for i in part {
                    labels[i] = id;
                }
            }
        }
    }
    RegionDecomposition::new(shape.id.clone(), labels)
}

/// Samples neighbor pairs of a synthetic over-segmentation until every
/// neighbor pair has been visited, recording one example per pair and
/// carrying out merges at the configured rates.
pub fn gen_merge_examples<R: Rng + ?Sized>(
    shape: &Shape,
    rng: &mut R,
    params: &MergeGenParams,
) -> Result<MergeGenOutput> {
    let gt = shape.gt()?;
    let initial = synthetic_oversegmentation(shape, rng, params)?;
    let tree = KdTree::new(shape.positions.clone());
    let point_pairs = cross_point_pairs(shape, &initial.labels, params.adjacency_threshold);

    let mut cur = initial.clone();
    let mut members = cur.regions();
    let mut visited: HashSet<(u32, u32)> = HashSet::new();
    let mut examples = Vec::new();
    let mut stats = MergeGenStats::default();
    loop {
        let open: Vec<(u32, u32)> = pairs_from_points(&cur.labels, &point_pairs)
            .into_iter()
            .filter(|p| !visited.contains(p))
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        if open.is_empty() {
            break;
        }
        let (a, b) = open[rng.random_range(0..open.len())];
        visited.insert((a, b));
        let best_a = best_overlap_part(&members[&a], gt).expect("non-empty");
        let best_b = best_overlap_part(&members[&b], gt).expect("non-empty");
        let target = best_a == best_b;
        let req = MergeRequest::build(
            shape,
            &tree,
            &cur.labels,
            (a, &members[&a]),
            (b, &members[&b]),
            params.outside_radius,
            rng,
        )?;
        examples.push(MergeExample {
            region_a: a,
            region_b: b,
            best_a,
            best_b,
            features: req.features(),
            point_indices: req.points.point_indices,
            target,
        });
        let p = if target {
            params.execute_positive
        } else {
            params.execute_negative
        };
        let execute = rng.random::<f64>() < p;
        if target {
            stats.positive += 1;
            stats.positive_executed += execute as usize;
        } else {
            stats.negative += 1;
            stats.negative_executed += execute as usize;
        }
        if execute {
            let id = cur.fresh_id();
            let mut joined = members.remove(&a).expect("live region");
            joined.extend(members.remove(&b).expect("live region"));
            for &i in &joined {
                cur.labels[i] = id;
            }
            members.insert(id, joined);
        }
    }
    Ok(MergeGenOutput {
        initial,
        examples,
        stats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gates() {
        let flags = [true, true, true, false];
        let targets = [true, false, false, true];
        let g = GateScores::compute(&flags, &targets);
        assert!((g.precision - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(g.recall, 0.5);
        assert!(!g.passes(0.4));
        assert!(g.passes(0.3));
    }

    #[test]
    fn gate_boundary_39_percent() {
        // 100 inside-flagged points, 39 of them inside the target
        let mut flags = vec![true; 100];
        flags.extend(vec![false; 100]);
        let mut targets = vec![false; 200];
        for t in targets.iter_mut().take(39) {
            *t = true;
        }
        let g = GateScores::compute(&flags, &targets);
        assert_eq!(g.precision, 0.39);
        assert_eq!(g.recall, 1.0);
        assert!(!g.passes(0.4));
        targets[39] = true;
        assert!(GateScores::compute(&flags, &targets).passes(0.4));
    }

    #[test]
    fn k_support() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..1000 {
            let k = sample_k(&mut rng, 10);
            assert!((1..=10).contains(&k));
        }
    }
}
