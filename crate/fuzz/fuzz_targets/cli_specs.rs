#![no_main]

use libfuzzer_sys::fuzz_target;
use shred_cli::opspec::{OpPlan, OpSpec, StagePath};
use shred_core::metrics::parse_grid;

// --op, --record/--replay and --grid values
fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let ops: Vec<OpSpec> = text.split('\n').filter_map(|l| l.parse().ok()).collect();
    let paths: Vec<StagePath> = text.split('\n').filter_map(|l| l.parse().ok()).collect();
    let plan = OpPlan::build(&ops, &paths, &paths);
    let _ = (plan.replay_paths(), plan.record_paths());
    if let Ok(grid) = parse_grid(text) {
        assert!(grid.iter().all(|t| (0.0..=1.0 + 1e-9).contains(t)));
    }
});
