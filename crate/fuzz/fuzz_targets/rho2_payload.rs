#![no_main]
use libfuzzer_sys::fuzz_target;
use phasemap_pipeline::store::{decode_rho2, encode_rho2};

fuzz_target!(|data: &[u8]| {
    if let Ok(r) = decode_rho2(data) {
        assert_eq!(encode_rho2(&r), data);
    }
});
