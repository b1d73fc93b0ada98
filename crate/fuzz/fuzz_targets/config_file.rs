#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(cfg) = gibbsquad::ExperimentConfig::parse(text) {
            let _ = gibbsquad::ExperimentConfig::parse(&cfg.to_config_string());
        }
    }
});
