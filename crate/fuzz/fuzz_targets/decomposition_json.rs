#![no_main]

use libfuzzer_sys::fuzz_target;
use shred_core::pipeline::DecompositionFile;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = DecompositionFile::parse(text);
    }
});
