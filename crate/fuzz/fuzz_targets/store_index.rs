#![no_main]
use libfuzzer_sys::fuzz_target;
use phasemap_pipeline::store::Index;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = Index::from_json(text);
    }
});
