#![no_main]
use libfuzzer_sys::fuzz_target;
use phasemap_core::autoencoder::MlpAutoencoder;

fuzz_target!(|data: &[u8]| {
    if let Ok(m) = MlpAutoencoder::from_bytes(data) {
        assert_eq!(m.to_bytes(), data);
        let x = vec![0.5; m.input_dim()];
        let _ = m.score(&x);
    }
});
