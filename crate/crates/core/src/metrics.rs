//! Region purity, AIoU and the merge-threshold sweep.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::operators::Operators;
use crate::pipeline::{run_configured_merge, run_pre_merge, PipelineConfig};
use crate::shape::Shape;

/// Intersection table between a predicted and a ground-truth labeling.
struct Overlap {
    /// (region, part) -> shared points
    inter: HashMap<(u32, u32), u64>,
    region_size: HashMap<u32, u64>,
    part_size: Vec<u64>,
}

impl Overlap {
    fn new(pred: &[u32], gt: &[u32]) -> Result<Self> {
        if pred.len() != gt.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} predicted labels vs {} ground-truth labels",
                pred.len(),
                gt.len()
            )));
        }
        if pred.is_empty() {
            return Err(Error::EmptyPointSet);
        }
        let parts = gt.iter().map(|&g| g as usize + 1).max().unwrap_or(0);
        let mut o = Overlap {
            inter: HashMap::new(),
            region_size: HashMap::new(),
            part_size: vec![0; parts],
        };
        for (&r, &g) in pred.iter().zip(gt) {
            *o.inter.entry((r, g)).or_default() += 1;
            *o.region_size.entry(r).or_default() += 1;
            o.part_size[g as usize] += 1;
        }
        Ok(o)
    }

    /// IoU as an exact fraction (intersection, union).
    fn iou(&self, r: u32, g: u32, inter: u64) -> (u64, u64) {
        (
            inter,
            self.region_size[&r] + self.part_size[g as usize] - inter,
        )
    }

    /// Best-IoU part per region; ties go to the lower part id.
    fn best_part(&self) -> HashMap<u32, u32> {
        let mut best: HashMap<u32, (u32, (u64, u64))> = HashMap::new();
        for (&(r, g), &i) in &self.inter {
            let cand = self.iou(r, g, i);
            best.entry(r)
                .and_modify(|cur| {
                    if frac_gt(cand, cur.1) || (frac_eq(cand, cur.1) && g < cur.0) {
                        *cur = (g, cand);
                    }
                })
                .or_insert((g, cand));
        }
        best.into_iter().map(|(r, (g, _))| (r, g)).collect()
    }

    /// Best IoU per ground-truth part over all regions.
    fn best_iou(&self) -> Vec<f64> {
        let mut best = vec![(0u64, 1u64); self.part_size.len()];
        for (&(r, g), &i) in &self.inter {
            let cand = self.iou(r, g, i);
            if frac_gt(cand, best[g as usize]) {
                best[g as usize] = cand;
            }
        }
        best.into_iter().map(|(a, b)| a as f64 / b as f64).collect()
    }
}

fn frac_gt(a: (u64, u64), b: (u64, u64)) -> bool {
    (a.0 as u128) * (b.1 as u128) > (b.0 as u128) * (a.1 as u128)
}

fn frac_eq(a: (u64, u64), b: (u64, u64)) -> bool {
    (a.0 as u128) * (b.1 as u128) == (b.0 as u128) * (a.1 as u128)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartScore {
    pub gt_id: u32,
    pub best_iou: f64,
    pub purity_fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub shape_id: String,
    pub region_count: usize,
    pub purity: f64,
    pub aiou: f64,
    pub per_gt_part: Vec<PartScore>,
}

/// Per-part purity fractions: each region is relabeled to its best-IoU
/// ground-truth part, then each part reports the share of its points that
/// kept its own label. Parts absent from `gt` (possible only for labelings
/// that skip ids) are omitted.
fn purity_fractions(o: &Overlap) -> Vec<Option<f64>> {
    let best = o.best_part();
    let mut kept = vec![0u64; o.part_size.len()];
    for (&(r, g), &i) in &o.inter {
        if best[&r] == g {
            kept[g as usize] += i;
        }
    }
    kept.iter()
        .zip(&o.part_size)
        .map(|(&k, &s)| (s > 0).then(|| k as f64 / s as f64))
        .collect()
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

pub fn region_purity(pred: &[u32], gt: &[u32]) -> Result<f64> {
    let o = Overlap::new(pred, gt)?;
    Ok(mean(purity_fractions(&o).into_iter().flatten()))
}

pub fn aiou(pred: &[u32], gt: &[u32]) -> Result<f64> {
    let o = Overlap::new(pred, gt)?;
    let best = o.best_iou();
    Ok(mean(
        best.into_iter()
            .zip(&o.part_size)
            .filter(|(_, &s)| s > 0)
            .map(|(v, _)| v),
    ))
}

pub fn evaluate(shape_id: &str, pred: &[u32], gt: &[u32]) -> Result<EvalReport> {
    let o = Overlap::new(pred, gt)?;
    let fractions = purity_fractions(&o);
    let ious = o.best_iou();
    let per_gt_part: Vec<PartScore> = fractions
        .iter()
        .zip(&ious)
        .enumerate()
        .filter_map(|(g, (f, &iou))| {
            f.map(|f| PartScore {
                gt_id: g as u32,
                best_iou: iou,
                purity_fraction: f,
            })
        })
        .collect();
    Ok(EvalReport {
        shape_id: shape_id.to_string(),
        region_count: o.region_size.len(),
        purity: mean(per_gt_part.iter().map(|p| p.purity_fraction)),
        aiou: mean(per_gt_part.iter().map(|p| p.best_iou)),
        per_gt_part,
    })
}

/// Mean of per-shape values (shapes weigh equally regardless of size).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub shapes: usize,
    pub mean_regions: f64,
    pub mean_purity: f64,
    pub mean_aiou: f64,
}

pub fn aggregate(reports: &[EvalReport]) -> Aggregate {
    Aggregate {
        shapes: reports.len(),
        mean_regions: mean(reports.iter().map(|r| r.region_count as f64)),
        mean_purity: mean(reports.iter().map(|r| r.purity)),
        mean_aiou: mean(reports.iter().map(|r| r.aiou)),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub threshold: f64,
    pub regions: usize,
    pub purity: f64,
}

/// `0.01, 0.02, ..., 0.99`.
pub fn default_grid() -> Vec<f64> {
    (1..=99).map(|i| i as f64 / 100.0).collect()
}

pub const MAX_GRID_POINTS: usize = 100_000;

/// Parses `start:stop:step` (inclusive of `stop` up to rounding).
pub fn parse_grid(spec: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = spec.split(':').collect();
    let bad = || Error::Config(format!("grid {spec:?} is not start:stop:step"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let nums: Vec<f64> = parts
        .iter()
        .map(|p| p.trim().parse::<f64>().map_err(|_| bad()))
        .collect::<Result<_>>()?;
    let (start, stop, step) = (nums[0], nums[1], nums[2]);
    if !step.is_finite() || step <= 0.0 || !start.is_finite() || !stop.is_finite() || stop < start {
        return Err(bad());
    }
    if !(0.0..=1.0).contains(&start) || !(0.0..=1.0).contains(&stop) {
        return Err(Error::Config("grid must lie within [0, 1]".into()));
    }
    let count = ((stop - start) / step + 1e-9).floor() + 1.0;
    if count > MAX_GRID_POINTS as f64 {
        return Err(Error::Config(format!(
            "grid {spec:?} has more than {MAX_GRID_POINTS} thresholds"
        )));
    }
    let count = count as usize;
    // round to the step's decimal precision so 0.07 prints as 0.07
    Ok((0..count)
        .map(|i| ((start + i as f64 * step) * 1e9).round() / 1e9)
        .collect())
}

/// Runs FPS, split and fix once, then the merge stage once per threshold
/// from that shared decomposition.
pub fn sweep_thresholds(
    shape: &Shape,
    ops: &mut Operators<'_>,
    config: &PipelineConfig,
    thresholds: &[f64],
) -> Result<Vec<SweepRow>> {
    let gt = shape.gt()?;
    let (pre, _) = run_pre_merge(shape, ops, config)?;
    let mut rows = Vec::with_capacity(thresholds.len());
    for &t in thresholds {
        let mut cfg = config.clone();
        cfg.merge_threshold = t;
        cfg.validate()?;
        let out = if config.enable_merge {
            let op = ops
                .merge
                .as_deref_mut()
                .ok_or_else(|| Error::Config("merge stage enabled without an operator".into()))?;
            run_configured_merge(shape, &pre, op, &cfg)?.0
        } else {
            pre.clone()
        };
        rows.push(SweepRow {
            threshold: t,
            regions: out.region_count(),
            purity: region_purity(&out.labels, gt)?,
        });
    }
    Ok(rows)
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("threshold,regions,purity\n");
    for r in rows {
        out.push_str(&format!("{},{},{}\n", r.threshold, r.regions, r.purity));
    }
    out
}
