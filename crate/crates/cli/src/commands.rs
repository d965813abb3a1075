use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{anyhow, bail, Context};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use shred_core::metrics::{
    aggregate, evaluate, parse_grid, sweep_csv, sweep_thresholds, EvalReport, SweepRow,
};
use shred_core::operators::heuristic::{EchoFix, HeuristicSplit, NormalAgreementMerge};
use shred_core::operators::oracle::{OracleFix, OracleMerge, OracleSplit};
use shred_core::operators::score_file::{
    new_request_sink, new_sink, to_jsonl, Recording, Replay, RequestSink, ScoreFile, ScoreSink,
};
use shred_core::operators::{
    FixOperator, FixRequest, MergeOperator, MergeRequest, OpContext, OpKind, Operators,
    SplitOperator, SplitRequest, SPLIT_SLOTS,
};
use shred_core::pipeline::{
    run_pipeline, DecompositionFile, PipelineConfig, DECOMPOSITION_FORMAT_VERSION,
};
use shred_core::procgen::sheet_suite;
use shred_core::spatial::KdTree;
use shred_core::synthgen::shard::{
    decode_shard, encode_shard, write_manifest, ShardManifest, ShardRecord, ShardWriter,
    MANIFEST_VERSION,
};
use shred_core::synthgen::{
    gen_fix_example, gen_merge_examples, gen_split_examples, matched_split_labels, FixGenParams,
    FixOutcome, MergeGenParams,
};
use shred_core::Shape;

use crate::opspec::{OpPlan, OpSource};
use crate::{
    DecomposeArgs, EvalArgs, ExampleKind, FixturesArgs, GendataArgs, MatchArgs, PipelineArgs,
    SweepArgs, EXIT_CONFIG, EXIT_PARTIAL,
};

#[derive(Debug)]
pub enum Outcome {
    Done,
    /// Per-item failures as `(item, message)`.
    Partial(Vec<(String, String)>),
    Config(String),
}

impl Outcome {
    pub fn report(self) -> ExitCode {
        match self {
            Outcome::Done => ExitCode::SUCCESS,
            Outcome::Partial(failures) => {
                eprintln!("{} item(s) failed:", failures.len());
                for (item, msg) in failures {
                    eprintln!("  {item}: {msg}");
                }
                ExitCode::from(EXIT_PARTIAL)
            }
            Outcome::Config(msg) => {
                eprintln!("error: {msg}");
                ExitCode::from(EXIT_CONFIG)
            }
        }
    }
}

fn config_outcome<T>(r: anyhow::Result<T>) -> Result<T, Outcome> {
    r.map_err(|e| Outcome::Config(format!("{e:#}")))
}

fn finish(failures: Vec<(String, String)>) -> Outcome {
    if failures.is_empty() {
        Outcome::Done
    } else {
        Outcome::Partial(failures)
    }
}

fn check_inputs(paths: &[PathBuf]) -> anyhow::Result<()> {
    let mut stems = HashSet::new();
    for p in paths {
        if !p.is_file() {
            bail!("input {} does not exist", p.display());
        }
        let stem = p
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        if !stems.insert(stem.clone()) {
            bail!("two inputs share the shape id {stem:?}");
        }
    }
    Ok(())
}

fn load_shape(path: &Path, normalize: bool) -> shred_core::Result<Shape> {
    let s = Shape::load(path)?;
    Ok(if normalize { s.normalized().0 } else { s })
}

fn display(path: &Path) -> String {
    path.display().to_string()
}

/// Score files and record sinks shared by every shape of a run.
struct OpResources {
    plan: OpPlan,
    replays: HashMap<PathBuf, Arc<ScoreFile>>,
    sinks: BTreeMap<PathBuf, (ScoreSink, Option<RequestSink>)>,
}

/// Path of the request log written next to a record file.
pub fn request_log_path(record: &Path) -> PathBuf {
    let mut p = record.as_os_str().to_owned();
    p.push(".requests.bin");
    PathBuf::from(p)
}

impl OpResources {
    fn new(args: &PipelineArgs) -> anyhow::Result<Self> {
        let plan = OpPlan::build(&args.ops, &args.record, &args.replay);
        if args.log_requests && plan.record_paths().is_empty() {
            bail!("--log-requests needs at least one recorded stage");
        }
        let mut replays = HashMap::new();
        for p in plan.replay_paths() {
            let f = ScoreFile::load(&p)
                .with_context(|| format!("reading score file {}", p.display()))?;
            replays.insert(p, Arc::new(f));
        }
        let sinks = plan
            .record_paths()
            .into_iter()
            .map(|p| (p, (new_sink(), args.log_requests.then(new_request_sink))))
            .collect();
        Ok(OpResources {
            plan,
            replays,
            sinks,
        })
    }

    /// Wraps `op` in a recorder when `kind` is recorded.
    fn record<O>(&self, kind: OpKind, op: O) -> Result<Recording<O>, O> {
        match &self.plan.stage(kind).record {
            Some(p) => {
                let (scores, requests) = &self.sinks[p];
                let rec = Recording::new(op, scores.clone());
                Ok(match requests {
                    Some(r) => rec.with_requests(r.clone()),
                    None => rec,
                })
            }
            None => Err(op),
        }
    }

    fn replay(&self, kind: OpKind) -> Option<Replay> {
        match &self.plan.stage(kind).base {
            OpSource::Replay(p) => Some(Replay::new(self.replays[p].clone(), kind)),
            _ => None,
        }
    }

    fn operators(&self) -> Operators<'static> {
        let base = |k: OpKind| &self.plan.stage(k).base;
        let split: Box<dyn SplitOperator> = match base(OpKind::Split) {
            OpSource::Heuristic => Box::new(HeuristicSplit::default()),
            OpSource::Replay(_) => Box::new(self.replay(OpKind::Split).expect("replay source")),
            _ => Box::new(OracleSplit),
        };
        let fix: Box<dyn FixOperator> = match base(OpKind::Fix) {
            OpSource::Heuristic => Box::new(EchoFix),
            OpSource::Replay(_) => Box::new(self.replay(OpKind::Fix).expect("replay source")),
            _ => Box::new(OracleFix),
        };
        let merge: Box<dyn MergeOperator> = match base(OpKind::Merge) {
            OpSource::Heuristic => Box::new(NormalAgreementMerge),
            OpSource::Replay(_) => Box::new(self.replay(OpKind::Merge).expect("replay source")),
            _ => Box::new(OracleMerge),
        };
        let split: Box<dyn SplitOperator> = match self.record(OpKind::Split, forward_split(split)) {
            Ok(r) => Box::new(r),
            Err(op) => Box::new(op),
        };
        let fix: Box<dyn FixOperator> = match self.record(OpKind::Fix, forward_fix(fix)) {
            Ok(r) => Box::new(r),
            Err(op) => Box::new(op),
        };
        let merge: Box<dyn MergeOperator> = match self.record(OpKind::Merge, forward_merge(merge)) {
            Ok(r) => Box::new(r),
            Err(op) => Box::new(op),
        };
        Operators {
            split: Some(split),
            fix: Some(fix),
            merge: Some(merge),
        }
    }

    /// Writes every record file, ordered by shape, kind and sequence number,
    /// with request logs in the same order.
    fn flush(&self) -> anyhow::Result<()> {
        for (path, (scores, requests)) in &self.sinks {
            let mut records = scores.lock().expect("score sink poisoned").clone();
            records.sort_by(|a, b| {
                (&a.shape, a.kind.as_str(), a.seq).cmp(&(&b.shape, b.kind.as_str(), b.seq))
            });
            fs::write(path, to_jsonl(records)?)
                .with_context(|| format!("writing {}", path.display()))?;
            if let Some(requests) = requests {
                let mut logged = requests.lock().expect("request sink poisoned").clone();
                logged.sort_by(|a, b| {
                    (&a.shape, a.kind.as_str(), a.seq).cmp(&(&b.shape, b.kind.as_str(), b.seq))
                });
                let shard: Vec<ShardRecord> = logged.into_iter().map(|l| l.record).collect();
                let out = request_log_path(path);
                fs::write(&out, encode_shard(&shard))
                    .with_context(|| format!("writing {}", out.display()))?;
            }
        }
        Ok(())
    }
}

fn forward_split(
    mut op: Box<dyn SplitOperator>,
) -> impl FnMut(&OpContext<'_>, &SplitRequest) -> shred_core::Result<shred_core::operators::SplitResponse>
{
    move |c, r| op.split(c, r)
}

fn forward_fix(
    mut op: Box<dyn FixOperator>,
) -> impl FnMut(&OpContext<'_>, &FixRequest) -> shred_core::Result<shred_core::operators::FixResponse>
{
    move |c, r| op.fix(c, r)
}

fn forward_merge(
    mut op: Box<dyn MergeOperator>,
) -> impl FnMut(&OpContext<'_>, &MergeRequest) -> shred_core::Result<shred_core::operators::MergeResponse>
{
    move |c, r| op.merge(c, r)
}

pub fn decompose(args: &DecomposeArgs) -> Outcome {
    let setup = || -> anyhow::Result<(PipelineConfig, OpResources)> {
        let config = args.pipeline.config();
        config.validate()?;
        check_inputs(&args.shapes)?;
        let res = OpResources::new(&args.pipeline)?;
        fs::create_dir_all(&args.out)
            .with_context(|| format!("creating {}", args.out.display()))?;
        Ok((config, res))
    };
    let (config, res) = match config_outcome(setup()) {
        Ok(v) => v,
        Err(o) => return o,
    };
    let normalize = !args.pipeline.no_normalize;

    let failures: Vec<(String, String)> = args
        .shapes
        .par_iter()
        .map(|path| -> Result<(), (String, String)> {
            let fail = |e: &dyn std::fmt::Display| (display(path), e.to_string());
            let shape = load_shape(path, normalize).map_err(|e| fail(&e))?;
            let mut ops = res.operators();
            let (d, trace) = run_pipeline(&shape, &mut ops, &config).map_err(|e| fail(&e))?;
            let file = DecompositionFile::new(&d, trace, &config);
            let out = args.out.join(format!("{}.json", shape.id));
            let json = file.to_json().map_err(|e| fail(&e))?;
            fs::write(&out, json + "\n").map_err(|e| fail(&e))?;
            log::info!("{}: {} regions", shape.id, d.region_count());
            Ok(())
        })
        .filter_map(Result::err)
        .collect();

    if let Err(e) = res.flush() {
        return Outcome::Config(format!("{e:#}"));
    }
    finish(failures)
}

#[derive(Serialize)]
struct SweepMeta<'a> {
    format_version: u32,
    config: &'a PipelineConfig,
    grid: &'a [f64],
    shapes: Vec<String>,
}

/// Mean region count and purity per threshold over shapes.
fn mean_rows(per_shape: &[Vec<SweepRow>], grid: &[f64]) -> Vec<(f64, f64, f64)> {
    let n = per_shape.len().max(1) as f64;
    grid.iter()
        .enumerate()
        .map(|(i, &t)| {
            let regions = per_shape.iter().map(|r| r[i].regions as f64).sum::<f64>() / n;
            let purity = per_shape.iter().map(|r| r[i].purity).sum::<f64>() / n;
            (t, regions, purity)
        })
        .collect()
}

pub fn sweep(args: &SweepArgs) -> Outcome {
    let setup = || -> anyhow::Result<(PipelineConfig, Vec<f64>, OpResources, Vec<Shape>)> {
        let config = args.pipeline.config();
        config.validate()?;
        let grid = parse_grid(&args.grid)?;
        check_inputs(&args.shapes)?;
        let res = OpResources::new(&args.pipeline)?;
        let mut shapes = Vec::new();
        for p in &args.shapes {
            let s = load_shape(p, !args.pipeline.no_normalize)
                .with_context(|| format!("loading {}", p.display()))?;
            if s.gt_labels.is_none() {
                bail!(
                    "{} has no ground-truth labels; purity cannot be computed",
                    p.display()
                );
            }
            shapes.push(s);
        }
        Ok((config, grid, res, shapes))
    };
    let (config, grid, res, shapes) = match config_outcome(setup()) {
        Ok(v) => v,
        Err(o) => return o,
    };

    let results: Vec<Result<Vec<SweepRow>, (String, String)>> = shapes
        .par_iter()
        .map(|s| {
            sweep_thresholds(s, &mut res.operators(), &config, &grid)
                .map_err(|e| (s.id.clone(), e.to_string()))
        })
        .collect();
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(v) => rows.push(v),
            Err(f) => failures.push(f),
        }
    }

    let write = || -> anyhow::Result<()> {
        let csv = if rows.len() == 1 {
            sweep_csv(&rows[0])
        } else {
            let mut out = String::from("threshold,regions,purity\n");
            for (t, r, p) in mean_rows(&rows, &grid) {
                out.push_str(&format!("{t},{r},{p}\n"));
            }
            out
        };
        if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        fs::write(&args.out, csv).with_context(|| format!("writing {}", args.out.display()))?;
        let meta = SweepMeta {
            format_version: DECOMPOSITION_FORMAT_VERSION,
            config: &config,
            grid: &grid,
            shapes: shapes.iter().map(|s| s.id.clone()).collect(),
        };
        let mut meta_path = args.out.clone().into_os_string();
        meta_path.push(".json");
        fs::write(
            PathBuf::from(meta_path),
            serde_json::to_string_pretty(&meta)? + "\n",
        )?;
        res.flush()
    };
    if let Err(e) = write() {
        return Outcome::Config(format!("{e:#}"));
    }
    finish(failures)
}

#[derive(Serialize)]
struct EvalFile<'a> {
    format_version: u32,
    prediction: String,
    config: Option<&'a PipelineConfig>,
    report: &'a EvalReport,
}

pub fn eval(args: &EvalArgs) -> Outcome {
    let setup = || -> anyhow::Result<()> {
        if !args.shapes.is_dir() {
            bail!("shape directory {} does not exist", args.shapes.display());
        }
        for p in &args.preds {
            if !p.is_file() {
                bail!("prediction {} does not exist", p.display());
            }
        }
        fs::create_dir_all(&args.out)?;
        Ok(())
    };
    if let Err(o) = config_outcome(setup()) {
        return o;
    }

    let results: Vec<Result<EvalReport, (String, String)>> = args
        .preds
        .par_iter()
        .map(|p| {
            let run = || -> anyhow::Result<EvalReport> {
                let file = DecompositionFile::parse(&fs::read_to_string(p)?)?;
                let shape_path = args.shapes.join(format!("{}.shrd", file.shape));
                let shape = Shape::load(&shape_path)
                    .with_context(|| format!("loading {}", shape_path.display()))?;
                if shape.len() != file.n {
                    bail!(
                        "{} has {} points, prediction has {}",
                        shape.id,
                        shape.len(),
                        file.n
                    );
                }
                let gt = shape.gt().map_err(|e| anyhow!("{}: {e}", shape.id))?;
                let report = evaluate(&shape.id, &file.labels, gt)?;
                let out = EvalFile {
                    format_version: DECOMPOSITION_FORMAT_VERSION,
                    prediction: display(p),
                    config: file.config.as_ref(),
                    report: &report,
                };
                fs::write(
                    args.out.join(format!("{}.json", shape.id)),
                    serde_json::to_string_pretty(&out)? + "\n",
                )?;
                Ok(report)
            };
            run().map_err(|e| (display(p), format!("{e:#}")))
        })
        .collect();

    let mut reports = Vec::new();
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(v) => reports.push(v),
            Err(f) => failures.push(f),
        }
    }
    reports.sort_by(|a, b| a.shape_id.cmp(&b.shape_id));
    let agg = aggregate(&reports);

    let width = reports
        .iter()
        .map(|r| r.shape_id.len())
        .max()
        .unwrap_or(0)
        .max(5);
    let mut table = format!(
        "{:<width$}  {:>8}  {:>8}  {:>8}\n",
        "shape", "regions", "purity", "aiou"
    );
    let mut csv = String::from("shape,regions,purity,aiou\n");
    for r in &reports {
        table.push_str(&format!(
            "{:<width$}  {:>8}  {:>8.4}  {:>8.4}\n",
            r.shape_id, r.region_count, r.purity, r.aiou
        ));
        csv.push_str(&format!(
            "{},{},{},{}\n",
            r.shape_id, r.region_count, r.purity, r.aiou
        ));
    }
    table.push_str(&format!(
        "{:<width$}  {:>8.2}  {:>8.4}  {:>8.4}\n",
        "mean", agg.mean_regions, agg.mean_purity, agg.mean_aiou
    ));
    csv.push_str(&format!(
        "mean,{},{},{}\n",
        agg.mean_regions, agg.mean_purity, agg.mean_aiou
    ));
    print!("{table}");
    let summary = serde_json::json!({
        "format_version": DECOMPOSITION_FORMAT_VERSION,
        "aggregate": agg,
        "shapes": reports.iter().map(|r| &r.shape_id).collect::<Vec<_>>(),
    });
    let write = || -> anyhow::Result<()> {
        fs::write(args.out.join("aggregate.csv"), csv)?;
        fs::write(
            args.out.join("aggregate.json"),
            serde_json::to_string_pretty(&summary)? + "\n",
        )?;
        Ok(())
    };
    if let Err(e) = write() {
        return Outcome::Config(format!("{e:#}"));
    }
    finish(failures)
}

struct ShapeExamples {
    records: Vec<ShardRecord>,
    rejected: usize,
}

fn shape_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

fn examples_for(
    args: &GendataArgs,
    shape: &Shape,
    index: usize,
    fix: &FixGenParams,
    merge: &MergeGenParams,
) -> shred_core::Result<ShapeExamples> {
    let mut rng = shape_rng(args.seed, index);
    let mut records = Vec::new();
    let mut rejected = 0;
    match args.kind {
        ExampleKind::Split => {
            for e in gen_split_examples(shape, args.fps_k, args.seed.wrapping_add(index as u64))? {
                records.push(ShardRecord::new(OpKind::Split, &e.features, e.targets)?);
            }
        }
        ExampleKind::Fix => {
            let tree = KdTree::new(shape.positions.clone());
            for _ in 0..args.fix_attempts {
                match gen_fix_example(shape, &tree, &mut rng, fix)? {
                    FixOutcome::Accepted(e) => {
                        records.push(ShardRecord::new(OpKind::Fix, &e.features, e.targets)?)
                    }
                    FixOutcome::Rejected(_) => rejected += 1,
                }
            }
        }
        ExampleKind::Merge => {
            for _ in 0..args.merge_runs {
                for e in gen_merge_examples(shape, &mut rng, merge)?.examples {
                    records.push(ShardRecord::new(
                        OpKind::Merge,
                        &e.features,
                        vec![e.target as u8],
                    )?);
                }
            }
        }
    }
    Ok(ShapeExamples { records, rejected })
}

pub fn gendata(args: &GendataArgs) -> Outcome {
    let kind = match args.kind {
        ExampleKind::Split => OpKind::Split,
        ExampleKind::Fix => OpKind::Fix,
        ExampleKind::Merge => OpKind::Merge,
    };
    let setup = || -> anyhow::Result<ShardWriter> {
        if args.fps_k == 0 {
            bail!("fps-k must be at least 1");
        }
        check_inputs(&args.shapes)?;
        Ok(ShardWriter::new(&args.out, kind.as_str(), args.per_shard)?)
    };
    let mut writer = match config_outcome(setup()) {
        Ok(w) => w,
        Err(o) => return o,
    };
    let fix = FixGenParams::default();
    let merge = MergeGenParams::default();

    let results: Vec<Result<(String, ShapeExamples), (String, String)>> = args
        .shapes
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let shape =
                load_shape(p, !args.no_normalize).map_err(|e| (display(p), e.to_string()))?;
            let ex = examples_for(args, &shape, i, &fix, &merge)
                .map_err(|e| (display(p), e.to_string()))?;
            Ok((shape.id, ex))
        })
        .collect();

    let mut failures = Vec::new();
    let mut shapes = Vec::new();
    let (mut examples, mut rejected) = (0, 0);
    for r in results {
        match r {
            Ok((id, ex)) => {
                shapes.push(id);
                examples += ex.records.len();
                rejected += ex.rejected;
                for rec in ex.records {
                    if let Err(e) = writer.push(rec) {
                        return Outcome::Config(e.to_string());
                    }
                }
            }
            Err(f) => failures.push(f),
        }
    }
    let shards = match writer.finish() {
        Ok(s) => s,
        Err(e) => return Outcome::Config(e.to_string()),
    };
    let manifest = ShardManifest {
        format_version: MANIFEST_VERSION,
        kind,
        seed: args.seed,
        shapes,
        examples,
        rejected,
        shards,
        config: serde_json::json!({
            "fps_k": args.fps_k,
            "fix_attempts": args.fix_attempts,
            "merge_runs": args.merge_runs,
            "per_shard": args.per_shard,
            "normalize": !args.no_normalize,
            "fix": fix,
            "merge": merge,
        }),
    };
    if let Err(e) = write_manifest(&args.out.join("manifest.json"), &manifest) {
        return Outcome::Config(e.to_string());
    }
    println!(
        "{examples} {kind} examples in {} shard(s)",
        manifest.shards.len()
    );
    if kind == OpKind::Fix {
        println!(
            "fix rejection rate {:.4} ({rejected} rejected)",
            manifest.rejection_rate()
        );
    }
    finish(failures)
}

pub fn fixtures(args: &FixturesArgs) -> Outcome {
    if args.min_points == 0
        || args.min_points > args.max_points
        || args.min_parts == 0
        || args.min_parts > args.max_parts
    {
        return Outcome::Config("point and part ranges must be non-empty and positive".into());
    }
    let shapes = sheet_suite(
        args.count,
        (args.min_points, args.max_points),
        (args.min_parts, args.max_parts),
        args.seed,
    );
    let write = || -> anyhow::Result<()> {
        fs::create_dir_all(&args.out)?;
        for s in &shapes {
            s.save(&args.out.join(format!("{}.shrd", s.id)))?;
        }
        Ok(())
    };
    match write() {
        Ok(()) => Outcome::Done,
        Err(e) => Outcome::Config(format!("{e:#}")),
    }
}

pub fn match_targets(args: &MatchArgs) -> Outcome {
    let load = || -> anyhow::Result<(Vec<ShardRecord>, Vec<f32>)> {
        let shard =
            fs::read(&args.shard).with_context(|| format!("reading {}", args.shard.display()))?;
        let records = decode_shard(&shard)?;
        let raw =
            fs::read(&args.logits).with_context(|| format!("reading {}", args.logits.display()))?;
        if raw.len() % 4 != 0 {
            bail!("logits file length {} is not a multiple of 4", raw.len());
        }
        let logits: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        let want: usize = records.iter().map(|r| r.n_points * SPLIT_SLOTS).sum();
        if logits.len() != want {
            bail!("{} logits, shard needs {want}", logits.len());
        }
        Ok((records, logits))
    };
    let (records, logits) = match config_outcome(load()) {
        Ok(v) => v,
        Err(o) => return o,
    };
    let mut out = Vec::with_capacity(records.len());
    let mut failures = Vec::new();
    let mut offset = 0;
    for (i, rec) in records.into_iter().enumerate() {
        let len = rec.n_points * SPLIT_SLOTS;
        match matched_split_labels(&rec, &logits[offset..offset + len], !args.plain) {
            Ok(labels) => out.push(ShardRecord { labels, ..rec }),
            Err(e) => failures.push((format!("record {i}"), e.to_string())),
        }
        offset += len;
    }
    if !failures.is_empty() {
        return Outcome::Partial(failures);
    }
    match fs::write(&args.out, encode_shard(&out)) {
        Ok(()) => Outcome::Done,
        Err(e) => Outcome::Config(format!("writing {}: {e}", args.out.display())),
    }
}
