use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use shred_core::operators::score_file::ScoreFile;
use shred_core::operators::OpKind;
use shred_core::pipeline::DecompositionFile;
use shred_core::synthgen::shard::{decode_shard, read_manifest};
use shred_core::Shape;

fn shred(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_shred"))
        .args(args)
        .current_dir(cwd)
        .env("SHRED_THREADS", "2")
        .output()
        .expect("spawn shred")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

/// Two small labeled sheets in `dir/fx`.
fn fixtures(dir: &Path) -> Vec<String> {
    let o = shred(
        &[
            "fixtures",
            "--count",
            "2",
            "--min-points",
            "3000",
            "--max-points",
            "3500",
            "--min-parts",
            "3",
            "--max-parts",
            "5",
            "--seed",
            "4",
            "--out",
            "fx",
        ],
        dir,
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let mut v: Vec<String> = fs::read_dir(dir.join("fx"))
        .unwrap()
        .map(|e| format!("fx/{}", e.unwrap().file_name().to_string_lossy()))
        .collect();
    v.sort();
    v
}

fn with<'a>(head: &[&'a str], tail: &'a [String]) -> Vec<&'a str> {
    head.iter()
        .copied()
        .chain(tail.iter().map(String::as_str))
        .collect()
}

fn read(p: PathBuf) -> Vec<u8> {
    fs::read(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

#[test]
fn decompose_writes_one_file_per_shape() {
    let dir = tempfile::tempdir().unwrap();
    let shapes = fixtures(dir.path());
    let o = shred(
        &with(&["decompose", "--fps-k", "16", "--out", "dec"], &shapes),
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for s in &shapes {
        let id = Path::new(s).file_stem().unwrap().to_str().unwrap();
        let f = DecompositionFile::parse(
            &fs::read_to_string(dir.path().join(format!("dec/{id}.json"))).unwrap(),
        )
        .unwrap();
        let shape = Shape::load(&dir.path().join(s)).unwrap();
        assert_eq!(f.shape, id);
        assert_eq!(f.labels.len(), shape.len());
        let stages: Vec<&str> = f.trace.iter().map(|t| t.stage.as_str()).collect();
        assert_eq!(stages, ["fps", "split", "fix", "merge"]);
    }
}

#[test]
fn stage_off_drops_stage_from_trace() {
    let dir = tempfile::tempdir().unwrap();
    let shapes = fixtures(dir.path());
    let o = shred(
        &with(
            &[
                "decompose",
                "--fps-k",
                "16",
                "--stage-off",
                "merge",
                "--out",
                "dec",
            ],
            &shapes[..1],
        ),
        dir.path(),
    );
    assert_eq!(code(&o), 0);
    let id = Path::new(&shapes[0]).file_stem().unwrap().to_str().unwrap();
    let f = DecompositionFile::parse(
        &fs::read_to_string(dir.path().join(format!("dec/{id}.json"))).unwrap(),
    )
    .unwrap();
    assert_eq!(f.trace.last().unwrap().stage, "fix");
}

#[test]
fn recorded_scores_replay_identically() {
    let dir = tempfile::tempdir().unwrap();
    let shapes = fixtures(dir.path());
    let base = ["decompose", "--fps-k", "16", "--op", "heuristic"];
    let rec = [
        &base[..],
        &[
            "--record",
            "merge:m.jsonl",
            "--record",
            "split:s.jsonl",
            "--out",
            "a",
        ],
    ]
    .concat();
    assert_eq!(code(&shred(&with(&rec, &shapes), dir.path())), 0);
    let rep = [
        &base[..],
        &[
            "--replay",
            "merge:m.jsonl",
            "--replay",
            "split:s.jsonl",
            "--out",
            "b",
        ],
    ]
    .concat();
    let o = shred(&with(&rep, &shapes), dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for s in &shapes {
        let id = Path::new(s).file_stem().unwrap().to_str().unwrap();
        assert_eq!(
            read(dir.path().join(format!("a/{id}.json"))),
            read(dir.path().join(format!("b/{id}.json")))
        );
    }
    // a replay that runs out of records fails the shape, not the batch setup
    fs::write(dir.path().join("empty.jsonl"), "").unwrap();
    let o = shred(
        &with(
            &[
                "decompose",
                "--fps-k",
                "16",
                "--replay",
                "merge:empty.jsonl",
                "--out",
                "c",
            ],
            &shapes,
        ),
        dir.path(),
    );
    assert_eq!(code(&o), 2);
}

#[test]
fn sweep_writes_grid_rows() {
    let dir = tempfile::tempdir().unwrap();
    let shapes = fixtures(dir.path());
    let o = shred(
        &with(&["sweep", "--fps-k", "16", "--out", "sweep.csv"], &shapes),
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "threshold,regions,purity");
    assert_eq!(lines.len(), 100);
    let meta: serde_json::Value =
        serde_json::from_slice(&read(dir.path().join("sweep.csv.json"))).unwrap();
    assert_eq!(meta["grid"].as_array().unwrap().len(), 99);
}

#[test]
fn sweep_without_ground_truth_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let shapes = fixtures(dir.path());
    let s = Shape::load(&dir.path().join(&shapes[0])).unwrap();
    Shape::new("bare", s.positions.clone(), s.normals.clone(), None)
        .unwrap()
        .save(&dir.path().join("bare.shrd"))
        .unwrap();
    let o = shred(&["sweep", "--out", "sweep.csv", "bare.shrd"], dir.path());
    assert_eq!(code(&o), 3);
    assert!(!dir.path().join("sweep.csv").exists());
}

#[test]
fn eval_of_ground_truth_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let shapes = fixtures(dir.path());
    let s = Shape::load(&dir.path().join(&shapes[0])).unwrap();
    let gt: Vec<u32> = s.gt().unwrap().to_vec();
    let pred = serde_json::json!({
        "format_version": 1,
        "shape": s.id,
        "n": s.len(),
        "labels": gt,
        "trace": [],
    });
    fs::write(dir.path().join("gt.json"), pred.to_string()).unwrap();
    let o = shred(
        &["eval", "--shapes", "fx", "--out", "ev", "gt.json"],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(dir.path().join("ev/aggregate.csv")).unwrap();
    assert!(
        csv.lines()
            .any(|l| l == format!("{},{},1,1", s.id, s.gt_part_count().unwrap())),
        "{csv}"
    );

    let o = shred(
        &[
            "eval",
            "--shapes",
            "fx",
            "--out",
            "ev",
            "gt.json",
            "missing.json",
        ],
        dir.path(),
    );
    assert_eq!(code(&o), 3);
}

#[test]
fn gendata_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let shapes = fixtures(dir.path());
    for out in ["g1", "g2"] {
        let o = shred(
            &with(
                &[
                    "gendata",
                    "split",
                    "--fps-k",
                    "8",
                    "--seed",
                    "3",
                    "--per-shard",
                    "5",
                    "--out",
                    out,
                ],
                &shapes,
            ),
            dir.path(),
        );
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    let m = read_manifest(&dir.path().join("g1/manifest.json")).unwrap();
    assert_eq!(m.examples, 16);
    assert_eq!(m.shards.len(), 4);
    let mut total = 0;
    for s in &m.shards {
        let a = read(dir.path().join("g1").join(&s.file));
        assert_eq!(a, read(dir.path().join("g2").join(&s.file)));
        let recs = decode_shard(&a).unwrap();
        assert_eq!(recs.len(), s.examples);
        total += recs.len();
    }
    assert_eq!(total, m.examples);
}

#[test]
fn gendata_fix_reports_rejections() {
    let dir = tempfile::tempdir().unwrap();
    let shapes = fixtures(dir.path());
    let o = shred(
        &with(
            &["gendata", "fix", "--fix-attempts", "6", "--out", "g"],
            &shapes,
        ),
        dir.path(),
    );
    assert_eq!(code(&o), 0);
    let m = read_manifest(&dir.path().join("g/manifest.json")).unwrap();
    assert_eq!(m.examples + m.rejected, 12);
    assert!(String::from_utf8_lossy(&o.stdout).contains("rejection rate"));
}

#[test]
fn bad_flags_exit_with_config_status() {
    let dir = tempfile::tempdir().unwrap();
    let shapes = fixtures(dir.path());
    for args in [
        vec!["decompose", "--threshold", "1.5"],
        vec!["decompose", "--op", "merge=nope"],
        vec!["decompose", "--replay", "merge:absent.jsonl"],
        vec!["decompose", "--fps-k", "0"],
        vec!["sweep", "--grid", "0.5:0.1:0.1"],
        vec!["frobnicate"],
    ] {
        let o = shred(&with(&args, &shapes), dir.path());
        assert_eq!(code(&o), 3, "{args:?}");
    }
    let o = shred(&["decompose", "missing.shrd"], dir.path());
    assert_eq!(code(&o), 3);
    let o = Command::new(env!("CARGO_BIN_EXE_shred"))
        .args(["fixtures", "--count", "1"])
        .current_dir(dir.path())
        .env("SHRED_THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(code(&o), 3);
}

#[test]
fn one_bad_shape_gives_partial_status() {
    let dir = tempfile::tempdir().unwrap();
    let shapes = fixtures(dir.path());
    fs::write(dir.path().join("junk.shrd"), b"not a shape").unwrap();
    let mut args = with(&["decompose", "--fps-k", "16", "--out", "dec"], &shapes);
    args.push("junk.shrd");
    let o = shred(&args, dir.path());
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("junk.shrd"));
    assert_eq!(
        fs::read_dir(dir.path().join("dec")).unwrap().count(),
        shapes.len()
    );
}

#[test]
fn request_log_lines_up_with_scores() {
    let dir = tempfile::tempdir().unwrap();
    let shapes = fixtures(dir.path());
    let o = shred(
        &with(
            &[
                "decompose",
                "--fps-k",
                "16",
                "--record",
                "merge:m.jsonl",
                "--log-requests",
                "--out",
                "dec",
            ],
            &shapes,
        ),
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let scores = ScoreFile::load(&dir.path().join("m.jsonl")).unwrap();
    let text = fs::read_to_string(dir.path().join("m.jsonl")).unwrap();
    let requests = decode_shard(&read(dir.path().join("m.jsonl.requests.bin"))).unwrap();
    assert!(!requests.is_empty());
    assert_eq!(requests.len(), scores.len());
    for (line, req) in text.lines().zip(&requests) {
        let rec: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(req.kind, OpKind::Merge);
        assert_eq!(req.n_points, 2048);
        assert_eq!(
            req.labels,
            vec![(rec["score"].as_f64().unwrap() > 0.5) as u8]
        );
    }
    let o = shred(&with(&["decompose", "--log-requests"], &shapes), dir.path());
    assert_eq!(code(&o), 3);
}

#[test]
fn match_rewrites_split_labels() {
    let dir = tempfile::tempdir().unwrap();
    let shapes = fixtures(dir.path());
    let o = shred(
        &with(
            &["gendata", "split", "--fps-k", "4", "--out", "g"],
            &shapes[..1],
        ),
        dir.path(),
    );
    assert_eq!(code(&o), 0);
    let shard = dir.path().join("g/split-00000.bin");
    let recs = decode_shard(&read(shard.clone())).unwrap();
    // logits that put target slot t at slot 9 - t
    let mut logits = Vec::new();
    for r in &recs {
        for &t in &r.labels {
            for k in 0..10u8 {
                let v: f32 = if k == 9 - t { 4.0 } else { 0.0 };
                logits.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    fs::write(dir.path().join("logits.bin"), &logits).unwrap();
    let o = shred(
        &[
            "match",
            "g/split-00000.bin",
            "--logits",
            "logits.bin",
            "--out",
            "m.bin",
        ],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let matched = decode_shard(&read(dir.path().join("m.bin"))).unwrap();
    assert_eq!(matched.len(), recs.len());
    for (m, r) in matched.iter().zip(&recs) {
        assert_eq!(m.features, r.features);
        let want: Vec<u8> = r.labels.iter().map(|&t| 9 - t).collect();
        assert_eq!(m.labels, want);
    }
    fs::write(dir.path().join("short.bin"), &logits[4..]).unwrap();
    let o = shred(
        &[
            "match",
            "g/split-00000.bin",
            "--logits",
            "short.bin",
            "--out",
            "m2.bin",
        ],
        dir.path(),
    );
    assert_eq!(code(&o), 3);
}

/// Region purity and AIoU by direct counting over every (region, part) pair.
fn brute_scores(pred: &[u32], gt: &[u32]) -> (f64, f64) {
    let regions: std::collections::BTreeSet<u32> = pred.iter().copied().collect();
    let parts = *gt.iter().max().unwrap() + 1;
    let iou = |r: u32, g: u32| {
        let inter = pred
            .iter()
            .zip(gt)
            .filter(|(&p, &q)| p == r && q == g)
            .count();
        let union = pred
            .iter()
            .zip(gt)
            .filter(|(&p, &q)| p == r || q == g)
            .count();
        inter as f64 / union as f64
    };
    let mut best_part = std::collections::HashMap::new();
    for &r in &regions {
        let mut best = (0, -1.0);
        for g in 0..parts {
            let v = iou(r, g);
            if v > best.1 {
                best = (g, v);
            }
        }
        best_part.insert(r, best.0);
    }
    let (mut purity, mut aiou) = (0.0, 0.0);
    for g in 0..parts {
        let size = gt.iter().filter(|&&q| q == g).count();
        let kept = pred
            .iter()
            .zip(gt)
            .filter(|(p, &q)| q == g && best_part[p] == g)
            .count();
        purity += kept as f64 / size as f64;
        aiou += regions.iter().map(|&r| iou(r, g)).fold(0.0, f64::max);
    }
    (purity / parts as f64, aiou / parts as f64)
}

#[test]
fn eval_matches_brute_force() {
    let dir = tempfile::tempdir().unwrap();
    let shapes = fixtures(dir.path());
    let o = shred(
        &with(
            &[
                "decompose",
                "--fps-k",
                "24",
                "--op",
                "heuristic",
                "--stage-off",
                "merge",
                "--out",
                "dec",
            ],
            &shapes,
        ),
        dir.path(),
    );
    assert_eq!(code(&o), 0);
    let preds: Vec<String> = shapes
        .iter()
        .map(|s| {
            format!(
                "dec/{}.json",
                Path::new(s).file_stem().unwrap().to_str().unwrap()
            )
        })
        .collect();
    let o = shred(
        &with(&["eval", "--shapes", "fx", "--out", "ev"], &preds),
        dir.path(),
    );
    assert_eq!(code(&o), 0);
    let csv = fs::read_to_string(dir.path().join("ev/aggregate.csv")).unwrap();
    let (mut sum_p, mut sum_a) = (0.0, 0.0);
    for (s, p) in shapes.iter().zip(&preds) {
        let shape = Shape::load(&dir.path().join(s)).unwrap();
        let f = DecompositionFile::parse(&fs::read_to_string(dir.path().join(p)).unwrap()).unwrap();
        let (purity, aiou) = brute_scores(&f.labels, shape.gt().unwrap());
        assert!(aiou < 1.0, "prediction should be imperfect");
        let row: Vec<&str> = csv
            .lines()
            .find(|l| l.starts_with(&format!("{},", shape.id)))
            .unwrap()
            .split(',')
            .collect();
        assert!((row[2].parse::<f64>().unwrap() - purity).abs() < 1e-12);
        assert!((row[3].parse::<f64>().unwrap() - aiou).abs() < 1e-12);
        sum_p += purity;
        sum_a += aiou;
    }
    let mean: Vec<f64> = csv
        .lines()
        .last()
        .unwrap()
        .split(',')
        .skip(2)
        .map(|v| v.parse().unwrap())
        .collect();
    let n = shapes.len() as f64;
    assert!((mean[0] - sum_p / n).abs() < 1e-12);
    assert!((mean[1] - sum_a / n).abs() < 1e-12);
}
