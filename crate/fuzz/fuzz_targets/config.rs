#![no_main]

use libfuzzer_sys::fuzz_target;
use rrr_harness::ExperimentConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = ExperimentConfig::parse(text) {
        let _ = cfg.validate();
        let _ = cfg.roster();
    }
});
