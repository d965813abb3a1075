#![no_main]

use libfuzzer_sys::fuzz_target;
use shred_core::operators::score_file::ScoreFile;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = ScoreFile::parse(text);
    }
});
