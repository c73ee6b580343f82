#![no_main]
use libfuzzer_sys::fuzz_target;
use phasemap_pipeline::store::StatePayload;

fuzz_target!(|data: &[u8]| {
    if let Ok(p) = StatePayload::decode(data) {
        assert_eq!(p.encode(), data);
        let _ = p.to_state();
    }
});
