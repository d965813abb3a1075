#![no_main]

use libfuzzer_sys::fuzz_target;
use shred_core::Shape;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(shape) = Shape::parse_shrd1("fuzz", text) {
        // whatever parses must survive a write/read cycle
        let again = Shape::parse_shrd1("fuzz", &shape.to_shrd1()).expect("reparse");
        assert_eq!(again.len(), shape.len());
        assert_eq!(again.gt_labels, shape.gt_labels);
    }
});
