use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use shred_core::decomp::fps_cluster;
use shred_core::operators::requests::{FIX_SIDE_POINTS, SPLIT_POINTS};
use shred_core::operators::OpKind;
use shred_core::procgen::{labeled_sheet, SheetSpec};
use shred_core::spatial::KdTree;
use shred_core::synthgen::shard::{decode_shard, encode_shard, ShardRecord};
use shred_core::synthgen::{
    gen_fix_example, gen_merge_examples, gen_split_examples, matched_split_labels, oversegment,
    FixGenParams, FixOutcome, GateScores, MergeGenParams,
};
use shred_core::Shape;

fn sheet(points: usize, parts: usize, seed: u64) -> Shape {
    labeled_sheet(
        "sheet",
        SheetSpec {
            points,
            parts,
            seed,
        },
    )
}

#[test]
fn split_examples_cover_every_region() {
    let s = sheet(3000, 6, 1);
    let ex = gen_split_examples(&s, 32, 5).unwrap();
    assert_eq!(ex.len(), 32);
    for e in &ex {
        assert_eq!(e.point_indices.len(), SPLIT_POINTS);
        assert_eq!(e.features.len(), SPLIT_POINTS);
        assert!(e.targets.iter().all(|&t| t < 10));
        // slot 0 is the largest part in the sample
        let zeros = e.targets.iter().filter(|&&t| t == 0).count();
        for k in 1..10 {
            assert!(e.targets.iter().filter(|&&t| t == k).count() <= zeros);
        }
    }
    assert_eq!(ex, gen_split_examples(&s, 32, 5).unwrap());
}

#[test]
fn split_examples_need_ground_truth() {
    let s = sheet(500, 2, 1);
    let bare = Shape::new("x", s.positions.clone(), s.normals.clone(), None).unwrap();
    assert!(gen_split_examples(&bare, 8, 0).is_err());
}

#[test]
fn uncorrupted_fix_targets_equal_flags() {
    let s = sheet(3000, 5, 2);
    let tree = KdTree::new(s.positions.clone());
    let params = FixGenParams {
        grow_prob: 0.0,
        shrink_prob: 0.0,
        max_flip: 0.0,
        surplus_flip_prob: 0.0,
        ..Default::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..10 {
        let FixOutcome::Accepted(ex) = gen_fix_example(&s, &tree, &mut rng, &params).unwrap()
        else {
            panic!("clean example rejected");
        };
        assert_eq!(ex.features.len(), 2 * FIX_SIDE_POINTS);
        let flags: Vec<u8> = ex.features.iter().map(|f| f[6] as u8).collect();
        assert_eq!(flags, ex.targets);
        assert_eq!(ex.gt_part, ex.target_part);
        assert_eq!(
            ex.gates,
            GateScores {
                precision: 1.0,
                recall: 1.0
            }
        );
    }
}

#[test]
fn accepted_fix_examples_pass_gates() {
    let s = sheet(4000, 8, 4);
    let tree = KdTree::new(s.positions.clone());
    let params = FixGenParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut accepted, mut rejected) = (0, 0);
    for _ in 0..60 {
        match gen_fix_example(&s, &tree, &mut rng, &params).unwrap() {
            FixOutcome::Accepted(ex) => {
                let flags: Vec<bool> = ex.features.iter().map(|f| f[6] == 1.0).collect();
                let targets: Vec<bool> = ex.targets.iter().map(|&t| t == 1).collect();
                assert!(GateScores::compute(&flags, &targets).passes(params.gate));
                accepted += 1;
            }
            FixOutcome::Rejected(g) => {
                assert!(!g.passes(params.gate));
                rejected += 1;
            }
        }
    }
    assert!(accepted > rejected);
}

#[test]
fn oversegmentation_refines_fps() {
    let s = sheet(3000, 6, 5);
    let fps = fps_cluster(&s, 16, 5).unwrap();
    let d = oversegment(&s, &fps, &mut ChaCha8Rng::seed_from_u64(5), 10).unwrap();
    let mut owner = BTreeMap::new();
    for (l, f) in d.labels.iter().zip(&fps.labels) {
        assert_eq!(*owner.entry(*l).or_insert(*f), *f);
    }
    assert!(d.region_count() >= 16);
}

#[test]
fn merge_examples_are_labeled_by_best_part() {
    let s = sheet(3000, 6, 6);
    let gt = s.gt().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let out = gen_merge_examples(&s, &mut rng, &MergeGenParams::default()).unwrap();
    assert!(!out.examples.is_empty());
    let st = out.stats;
    assert_eq!(st.positive + st.negative, out.examples.len());
    for e in &out.examples {
        assert_eq!(e.target, e.best_a == e.best_b);
        assert_eq!(e.features.len(), 2048);
        let roles: Vec<(f32, f32)> = e.features.iter().map(|f| (f[6], f[7])).collect();
        assert_eq!(roles.iter().filter(|r| **r == (1.0, 0.0)).count(), 512);
        assert_eq!(roles.iter().filter(|r| **r == (0.0, 1.0)).count(), 512);
        assert!(e.point_indices.iter().all(|&i| i < gt.len()));
    }
}

#[test]
fn examples_survive_shards() {
    let s = sheet(1500, 4, 7);
    let recs: Vec<ShardRecord> = gen_split_examples(&s, 8, 0)
        .unwrap()
        .into_iter()
        .map(|e| ShardRecord::new(OpKind::Split, &e.features, e.targets).unwrap())
        .collect();
    assert_eq!(decode_shard(&encode_shard(&recs)).unwrap(), recs);
}

#[test]
fn matched_labels_follow_prediction_slots() {
    let s = sheet(2000, 5, 8);
    let ex = gen_split_examples(&s, 8, 1).unwrap();
    let rec = ShardRecord::new(OpKind::Split, &ex[0].features, ex[0].targets.clone()).unwrap();
    // network that predicts every target slot t as slot (t + 3) % 10
    let perm = |t: u8| (t as usize + 3) % 10;
    let mut logits = vec![0.0f32; rec.n_points * 10];
    for (n, &t) in rec.labels.iter().enumerate() {
        logits[n * 10 + perm(t)] = 5.0;
    }
    for overseg in [false, true] {
        let got = matched_split_labels(&rec, &logits, overseg).unwrap();
        let want: Vec<u8> = rec.labels.iter().map(|&t| perm(t) as u8).collect();
        assert_eq!(got, want);
    }
    assert!(matched_split_labels(&rec, &logits[10..], true).is_err());
}
