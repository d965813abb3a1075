#![no_main]

use libfuzzer_sys::fuzz_target;
use shred_core::synthgen::shard::{decode_shard, encode_shard};

fuzz_target!(|data: &[u8]| {
    if let Ok(records) = decode_shard(data) {
        assert_eq!(encode_shard(&records), data);
    }
});
