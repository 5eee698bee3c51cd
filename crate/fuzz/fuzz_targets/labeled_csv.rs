#![no_main]

use libfuzzer_sys::fuzz_target;
use rrr_core::data::iris_cancer::parse_labeled_csv;

fuzz_target!(|data: &[u8]| {
    let Some((&width, rest)) = data.split_first() else { return };
    let Ok(text) = std::str::from_utf8(rest) else { return };
    if let Ok(rows) = parse_labeled_csv(text, (width % 40) as usize) {
        assert!(rows.iter().all(|(x, _)| x.len() == (width % 40) as usize));
    }
});
