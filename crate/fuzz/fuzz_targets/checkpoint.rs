#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Some((csv, json)) = text.split_once('\0') {
            let _ = gibbsquad::samplers::Checkpoint::from_parts(csv, json);
        }
    }
});
