#![no_main]

use hoplite_core::harness::ExperimentConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(cfg) = ExperimentConfig::from_toml_str(text) {
            assert!(cfg.validate().is_ok());
        }
    }
});
