//! FPS → split → fix → merge orchestration.

use std::collections::{BTreeMap, HashMap, HashSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::decomp::{
    cross_point_pairs, fps_cluster, pairs_from_points, DEFAULT_ADJACENCY_THRESHOLD, DEFAULT_FPS_K,
};
use crate::error::{Error, Result};
use crate::metrics::region_purity;
use crate::operators::requests::{FIX_SIDE_POINTS, SPLIT_POINTS};
use crate::operators::{
    FixOperator, FixRequest, MergeOperator, MergeRequest, OpContext, Operators, SplitOperator,
    SplitRequest, SPLIT_SLOTS,
};
use crate::region::RegionDecomposition;
use crate::shape::Shape;
use crate::spatial::KdTree;

pub const DECOMPOSITION_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub fps_k: usize,
    pub fix_radius: f64,
    pub merge_outside_radius: f64,
    pub merge_threshold: f64,
    pub adjacency_threshold: f64,
    pub seed: u64,
    pub enable_split: bool,
    pub enable_fix: bool,
    pub enable_merge: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            fps_k: DEFAULT_FPS_K,
            fix_radius: 0.1,
            merge_outside_radius: 0.1,
            merge_threshold: 0.5,
            adjacency_threshold: DEFAULT_ADJACENCY_THRESHOLD,
            seed: 0,
            enable_split: true,
            enable_fix: true,
            enable_merge: true,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.fps_k == 0 {
            return Err(Error::Config("fps_k must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.merge_threshold) {
            return Err(Error::Config(format!(
                "merge threshold {} outside [0, 1]",
                self.merge_threshold
            )));
        }
        for (name, v) in [
            ("fix_radius", self.fix_radius),
            ("merge_outside_radius", self.merge_outside_radius),
            ("adjacency_threshold", self.adjacency_threshold),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!(
                    "{name} must be finite and non-negative"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
enum Stage {
    Split = 1,
    Fix = 2,
    Merge = 3,
}

fn stage_rng(seed: u64, stage: Stage) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stage as u64);
    rng
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    pub regions: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub purity: Option<f64>,
}

pub type StageTrace = Vec<StageRecord>;

fn trace_entry(shape: &Shape, decomp: &RegionDecomposition, stage: &str) -> StageRecord {
    StageRecord {
        stage: stage.to_string(),
        regions: decomp.region_count(),
        purity: shape
            .gt_labels
            .as_deref()
            .and_then(|gt| region_purity(&decomp.labels, gt).ok()),
    }
}

fn op_err(stage: &'static str, region: u32) -> impl FnOnce(Error) -> Error {
    move |e| Error::Operator {
        stage,
        region,
        source: Box::new(e),
    }
}

/// Replaces every region by one fresh region per slot its split response
/// uses. Slots predicted on the sample reach the remaining region points
/// through the nearest sampled point.
pub fn run_split_stage(
    shape: &Shape,
    decomp: &RegionDecomposition,
    op: &mut dyn SplitOperator,
    rng: &mut ChaCha8Rng,
) -> Result<RegionDecomposition> {
    let ctx = OpContext { shape, decomp };
    let mut out = decomp.clone();
    for (region, members) in decomp.regions() {
        let req = SplitRequest::build(shape, region, &members, rng)?;
        let resp = op.split(&ctx, &req).map_err(op_err("split", region))?;
        if resp.labels.len() != SPLIT_POINTS {
            return Err(op_err("split", region)(Error::InvalidResponse(format!(
                "{} labels for {SPLIT_POINTS} points",
                resp.labels.len()
            ))));
        }
        if let Some(bad) = resp.labels.iter().find(|&&l| l as usize >= SPLIT_SLOTS) {
            return Err(op_err("split", region)(Error::InvalidResponse(format!(
                "slot {bad} out of range"
            ))));
        }

        let sample = &req.points.point_indices;
        let mut direct: HashMap<usize, u8> = HashMap::with_capacity(sample.len());
        for (k, &i) in sample.iter().enumerate() {
            direct.entry(i).or_insert(resp.labels[k]);
        }
        let tree = KdTree::from_indices(&shape.positions, sample);
        let slots: Vec<u8> = members
            .iter()
            .map(|&i| match direct.get(&i) {
                Some(&s) => s,
                None => {
                    let (k, _) = tree.nearest(shape.positions[i]).expect("non-empty sample");
                    resp.labels[k]
                }
            })
            .collect();

        let mut used: Vec<u8> = slots.clone();
        used.sort_unstable();
        used.dedup();
        let fresh: BTreeMap<u8, u32> = used.into_iter().map(|s| (s, out.fresh_id())).collect();
        for (&i, s) in members.iter().zip(&slots) {
            out.labels[i] = fresh[s];
        }
    }
    out.validate(shape.len())?;
    Ok(out)
}

/// Every region votes an inside-probability for its own points and for the
/// foreign points in its extended neighborhood; each point then joins the
/// region with the highest vote. Ties keep the point where it is when its
/// current region is among the tied, otherwise go to the lowest region id.
pub fn run_fix_stage(
    shape: &Shape,
    decomp: &RegionDecomposition,
    op: &mut dyn FixOperator,
    extra_radius: f64,
    rng: &mut ChaCha8Rng,
) -> Result<RegionDecomposition> {
    let ctx = OpContext { shape, decomp };
    let tree = KdTree::new(shape.positions.clone());
    let mut votes: Vec<Vec<(u32, f32)>> = vec![Vec::new(); shape.len()];

    for (region, members) in decomp.regions() {
        let nb = FixRequest::build(
            shape,
            &tree,
            &decomp.labels,
            region,
            &members,
            extra_radius,
            rng,
        )?;
        let req = &nb.request;
        let resp = op.fix(&ctx, req).map_err(op_err("fix", region))?;
        if resp.probs.len() != 2 * FIX_SIDE_POINTS {
            return Err(op_err("fix", region)(Error::InvalidResponse(format!(
                "{} probabilities for {} points",
                resp.probs.len(),
                2 * FIX_SIDE_POINTS
            ))));
        }
        if resp.probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(op_err("fix", region)(Error::InvalidResponse(
                "probability outside [0, 1]".into(),
            )));
        }

        let idx = &req.points.point_indices;
        let (inside_idx, outside_idx) = idx.split_at(FIX_SIDE_POINTS);
        let (inside_p, outside_p) = resp.probs.split_at(FIX_SIDE_POINTS);
        let mut spread = |targets: &[usize], sample: &[usize], probs: &[f32]| {
            let mut direct: HashMap<usize, f32> = HashMap::with_capacity(sample.len());
            for (k, &i) in sample.iter().enumerate() {
                direct.entry(i).or_insert(probs[k]);
            }
            let tree = KdTree::from_indices(&shape.positions, sample);
            for &i in targets {
                let p = match direct.get(&i) {
                    Some(&p) => p,
                    None => {
                        probs[tree
                            .nearest(shape.positions[i])
                            .expect("non-empty sample")
                            .0]
                    }
                };
                votes[i].push((region, p));
            }
        };
        spread(&members, inside_idx, inside_p);
        if !req.boundary_fallback {
            spread(&nb.outside_candidates, outside_idx, outside_p);
        }
    }

    let mut out = decomp.clone();
    for (i, v) in votes.iter().enumerate() {
        let prior = decomp.labels[i];
        let best = v.iter().map(|e| e.1).fold(f32::NEG_INFINITY, f32::max);
        let tied = v.iter().filter(|e| e.1 == best).map(|e| e.0);
        out.labels[i] = if v.iter().any(|e| e.0 == prior && e.1 == best) {
            prior
        } else {
            tied.min().unwrap_or(prior)
        };
    }
    out.validate(shape.len())?;
    Ok(out)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MergeStats {
    /// Rounds that performed at least one merge.
    pub rounds: usize,
    pub merges: usize,
    pub queries: usize,
}

/// Greedy merge rounds over neighboring regions.
///
/// Each round scores every neighbor pair that was not already declined in
/// its current form, visits pairs from most to least confident and merges a
/// pair when its score is strictly above the threshold and neither side has
/// merged this round. Merged regions get fresh ids. Stops after a round
/// without merges.
pub fn run_merge_stage(
    shape: &Shape,
    decomp: &RegionDecomposition,
    op: &mut dyn MergeOperator,
    config: &PipelineConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(RegionDecomposition, MergeStats)> {
    let point_pairs = cross_point_pairs(shape, &decomp.labels, config.adjacency_threshold);
    let tree = KdTree::new(shape.positions.clone());
    let mut cur = decomp.clone();
    let mut members = cur.regions();
    let mut declined: HashSet<(u32, u32)> = HashSet::new();
    let mut stats = MergeStats::default();

    loop {
        let pairs = pairs_from_points(&cur.labels, &point_pairs);
        let mut scored: Vec<(f32, u32, u32)> = Vec::new();
        {
            let ctx = OpContext {
                shape,
                decomp: &cur,
            };
            for &(a, b) in &pairs {
                if declined.contains(&(a, b)) {
                    continue;
                }
                let req = MergeRequest::build(
                    shape,
                    &tree,
                    &cur.labels,
                    (a, &members[&a]),
                    (b, &members[&b]),
                    config.merge_outside_radius,
                    rng,
                )?;
                let resp = op.merge(&ctx, &req).map_err(op_err("merge", a))?;
                if !(0.0..=1.0).contains(&resp.score) {
                    return Err(op_err("merge", a)(Error::InvalidResponse(format!(
                        "merge score {} outside [0, 1]",
                        resp.score
                    ))));
                }
                stats.queries += 1;
                scored.push((resp.score, a, b));
            }
        }
        scored.sort_by(|x, y| y.0.total_cmp(&x.0).then((x.1, x.2).cmp(&(y.1, y.2))));

        let mut touched: HashSet<u32> = HashSet::new();
        let mut merged_now = 0;
        for (p, a, b) in scored {
            if (p as f64) <= config.merge_threshold {
                declined.insert((a, b));
                continue;
            }
            if touched.contains(&a) || touched.contains(&b) {
                continue;
            }
            touched.insert(a);
            touched.insert(b);
            let id = cur.fresh_id();
            let mut joined = members.remove(&a).expect("live region");
            joined.extend(members.remove(&b).expect("live region"));
            joined.sort_unstable();
            for &i in &joined {
                cur.labels[i] = id;
            }
            members.insert(id, joined);
            merged_now += 1;
        }
        if merged_now == 0 {
            break;
        }
        stats.rounds += 1;
        stats.merges += merged_now;
    }
    cur.validate(shape.len())?;
    Ok((cur, stats))
}

/// FPS plus the enabled split and fix stages.
pub fn run_pre_merge(
    shape: &Shape,
    ops: &mut Operators<'_>,
    config: &PipelineConfig,
) -> Result<(RegionDecomposition, StageTrace)> {
    config.validate()?;
    let mut decomp = fps_cluster(shape, config.fps_k, config.seed)?;
    decomp.validate(shape.len())?;
    let mut trace = vec![trace_entry(shape, &decomp, "fps")];
    if config.enable_split {
        let op = ops
            .split
            .as_deref_mut()
            .ok_or_else(|| Error::Config("split stage enabled without an operator".into()))?;
        decomp = run_split_stage(
            shape,
            &decomp,
            op,
            &mut stage_rng(config.seed, Stage::Split),
        )?;
        trace.push(trace_entry(shape, &decomp, "split"));
    }
    if config.enable_fix {
        let op = ops
            .fix
            .as_deref_mut()
            .ok_or_else(|| Error::Config("fix stage enabled without an operator".into()))?;
        decomp = run_fix_stage(
            shape,
            &decomp,
            op,
            config.fix_radius,
            &mut stage_rng(config.seed, Stage::Fix),
        )?;
        trace.push(trace_entry(shape, &decomp, "fix"));
    }
    Ok((decomp, trace))
}

/// Merge stage with the pipeline's own random stream, so a merge run from a
/// cached pre-merge decomposition equals the one inside [`run_pipeline`].
pub fn run_configured_merge(
    shape: &Shape,
    decomp: &RegionDecomposition,
    op: &mut dyn MergeOperator,
    config: &PipelineConfig,
) -> Result<(RegionDecomposition, MergeStats)> {
    run_merge_stage(
        shape,
        decomp,
        op,
        config,
        &mut stage_rng(config.seed, Stage::Merge),
    )
}

pub fn run_pipeline(
    shape: &Shape,
    ops: &mut Operators<'_>,
    config: &PipelineConfig,
) -> Result<(RegionDecomposition, StageTrace)> {
    let (mut decomp, mut trace) = run_pre_merge(shape, ops, config)?;
    if config.enable_merge {
        let op = ops
            .merge
            .as_deref_mut()
            .ok_or_else(|| Error::Config("merge stage enabled without an operator".into()))?;
        decomp = run_configured_merge(shape, &decomp, op, config)?.0;
        trace.push(trace_entry(shape, &decomp, "merge"));
    }
    Ok((decomp, trace))
}

/// On-disk form of a pipeline result.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecompositionFile {
    pub shape: String,
    pub n: usize,
    pub labels: Vec<u32>,
    #[serde(default)]
    pub trace: StageTrace,
    #[serde(default)]
    pub config: Option<PipelineConfig>,
    #[serde(default = "default_version")]
    pub format_version: u32,
}

fn default_version() -> u32 {
    DECOMPOSITION_FORMAT_VERSION
}

impl DecompositionFile {
    pub fn new(decomp: &RegionDecomposition, trace: StageTrace, config: &PipelineConfig) -> Self {
        DecompositionFile {
            shape: decomp.shape_id.clone(),
            n: decomp.len(),
            labels: decomp.labels.clone(),
            trace,
            config: Some(config.clone()),
            format_version: DECOMPOSITION_FORMAT_VERSION,
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let f: DecompositionFile = serde_json::from_str(text)?;
        if f.n != f.labels.len() {
            return Err(Error::Format(format!(
                "n = {} but {} labels",
                f.n,
                f.labels.len()
            )));
        }
        if f.n == 0 {
            return Err(Error::EmptyPointSet);
        }
        if f.format_version != DECOMPOSITION_FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported format version {}",
                f.format_version
            )));
        }
        Ok(f)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn decomposition(&self) -> Result<RegionDecomposition> {
        RegionDecomposition::new(self.shape.clone(), self.labels.clone())
    }
}
