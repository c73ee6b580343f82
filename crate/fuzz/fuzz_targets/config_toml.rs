#![no_main]
use libfuzzer_sys::fuzz_target;
use phasemap_pipeline::PipelineConfig;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(cfg) = PipelineConfig::from_toml_str(text) {
            // a valid configuration survives its own serialization
            let again = PipelineConfig::from_toml_str(&cfg.to_toml_string()).expect("round trip");
            assert_eq!(again.shape(), cfg.shape());
        }
    }
});
