#![no_main]
use libfuzzer_sys::fuzz_target;
use phasemap_pipeline::store::Augmentations;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = Augmentations::from_json(text);
    }
});
