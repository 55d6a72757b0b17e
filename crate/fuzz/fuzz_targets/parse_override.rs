#![no_main]

use edrsim::engine::config::parse_override;
use edrsim::engine::SimConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &str| {
    let _ = parse_override(data);
    let sets: Vec<&str> = data.split('\n').collect();
    let mut cfg = SimConfig::default();
    if cfg.apply_overrides(&sets).is_ok() {
        let _ = cfg.resolve();
    }
});
