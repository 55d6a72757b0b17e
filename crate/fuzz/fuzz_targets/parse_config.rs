#![no_main]

use edrsim::engine::SimConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &str| {
    if let Ok(cfg) = SimConfig::from_toml_str(data) {
        let _ = cfg.resolve();
        // anything that parsed must survive a round trip
        let text = cfg.to_toml_string();
        let again = SimConfig::from_toml_str(&text).expect("re-parse");
        assert_eq!(again.to_toml_string(), text);
    }
});
