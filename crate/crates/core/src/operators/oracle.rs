//! Ground-truth oracles for the three operators.

use std::collections::{BTreeMap, HashSet};

use super::{
    FixOperator, FixRequest, FixResponse, MergeOperator, MergeRequest, MergeResponse, OpContext,
    SplitOperator, SplitRequest, SplitResponse, SPLIT_SLOTS,
};
use crate::error::Result;
use crate::geom::Point3;
use crate::spatial::KdTree;

/// Ground-truth part with the largest overlap with `members`; ties go to the
/// lower part id.
pub fn best_overlap_part(members: &[usize], gt: &[u32]) -> Option<u32> {
    let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
    for &i in members {
        *counts.entry(gt[i]).or_default() += 1;
    }
    counts
        .into_iter()
        .fold(None, |best: Option<(u32, usize)>, (part, c)| match best {
            Some((_, bc)) if bc >= c => best,
            _ => Some((part, c)),
        })
        .map(|(part, _)| part)
}

/// Slot targets for a sampled region: ground-truth instances present among
/// the sampled points are ranked by point count (ties to the lower id) and
/// numbered from 0. Only the `max_slots` largest keep a slot; points of the
/// other instances take the slot of their nearest kept point.
///
/// `indices` may repeat (upsampled regions); counts are over distinct points.
pub fn slot_targets(
    indices: &[usize],
    positions: &[Point3],
    gt: &[u32],
    max_slots: usize,
) -> Vec<u8> {
    let mut seen = HashSet::new();
    let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
    for &i in indices {
        if seen.insert(i) {
            *counts.entry(gt[i]).or_default() += 1;
        }
    }
    let mut ranked: Vec<(u32, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let slot_of: BTreeMap<u32, u8> = ranked
        .iter()
        .take(max_slots)
        .enumerate()
        .map(|(slot, &(part, _))| (part, slot as u8))
        .collect();

    let mut out: Vec<Option<u8>> = indices
        .iter()
        .map(|i| slot_of.get(&gt[*i]).copied())
        .collect();
    if out.iter().any(Option::is_none) {
        let kept: Vec<usize> = (0..indices.len()).filter(|&k| out[k].is_some()).collect();
        let tree = KdTree::from_indices(positions, &kept);
        for k in 0..indices.len() {
            if out[k].is_none() {
                let (near, _) = tree
                    .nearest(positions[k])
                    .expect("at least one kept instance");
                out[k] = out[kept[near]];
            }
        }
    }
    out.into_iter().map(|s| s.unwrap_or(0)).collect()
}

#[derive(Clone, Copy, Debug, Default)]
pub struct OracleSplit;

impl SplitOperator for OracleSplit {
    fn split(&mut self, ctx: &OpContext<'_>, req: &SplitRequest) -> Result<SplitResponse> {
        let gt = ctx.shape.gt()?;
        Ok(SplitResponse {
            labels: slot_targets(
                &req.points.point_indices,
                &req.points.positions,
                gt,
                SPLIT_SLOTS,
            ),
        })
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct OracleFix;

impl FixOperator for OracleFix {
    fn fix(&mut self, ctx: &OpContext<'_>, req: &FixRequest) -> Result<FixResponse> {
        let gt = ctx.shape.gt()?;
        let members = ctx.decomp.members(req.region)?;
        let target = best_overlap_part(&members, gt);
        Ok(FixResponse {
            probs: req
                .points
                .point_indices
                .iter()
                .map(|&i| if Some(gt[i]) == target { 1.0 } else { 0.0 })
                .collect(),
        })
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct OracleMerge;

impl MergeOperator for OracleMerge {
    fn merge(&mut self, ctx: &OpContext<'_>, req: &MergeRequest) -> Result<MergeResponse> {
        let gt = ctx.shape.gt()?;
        let a = best_overlap_part(&ctx.decomp.members(req.region_a)?, gt);
        let b = best_overlap_part(&ctx.decomp.members(req.region_b)?, gt);
        Ok(MergeResponse {
            score: if a == b { 1.0 } else { 0.0 },
        })
    }
}
