#![no_main]

use libfuzzer_sys::fuzz_target;
use rrr_core::data::Dataset;
use rrr_core::io::{decode_params, Container};

fuzz_target!(|data: &[u8]| {
    if let Ok(c) = Container::decode(data) {
        assert_eq!(c.encode(), data);
        let _ = Dataset::from_container(&c, None);
    }
    let _ = decode_params(data);
});
