#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = gibbsquad::diagnostics::DiagnosticsReport::from_records_csv(text);
        let _ = gibbsquad::diagnostics::DiagnosticsReport::parse_aggregates_csv(text);
    }
});
