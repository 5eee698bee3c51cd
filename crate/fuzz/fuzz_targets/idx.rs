#![no_main]

use libfuzzer_sys::fuzz_target;
use rrr_core::data::idx::{encode_idx, parse_idx};

fuzz_target!(|data: &[u8]| {
    if let Ok(arr) = parse_idx(data) {
        // Accepted input must round-trip exactly.
        assert_eq!(encode_idx(&arr), data);
        let _ = arr.to_images();
        let _ = arr.to_labels();
    }
});
