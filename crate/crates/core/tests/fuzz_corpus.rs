//! Replays the checked-in fuzz seeds through the same properties the fuzz
//! targets assert.

use std::fs;
use std::path::PathBuf;

use edrsim::engine::config::parse_override;
use edrsim::engine::trace::{format_trace, parse_trace};
use edrsim::engine::SimConfig;

fn seeds(target: &str) -> Vec<String> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut out: Vec<String> = fs::read_dir(&dir)
        .unwrap()
        .map(|e| String::from_utf8_lossy(&fs::read(e.unwrap().path()).unwrap()).into_owned())
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds in {}", dir.display());
    out
}

#[test]
fn config_seeds_round_trip() {
    let mut parsed = 0;
    for s in seeds("parse_config") {
        if let Ok(cfg) = SimConfig::from_toml_str(&s) {
            parsed += 1;
            let text = cfg.to_toml_string();
            assert_eq!(SimConfig::from_toml_str(&text).unwrap().to_toml_string(), text);
        }
    }
    assert!(parsed >= 2);
}

#[test]
fn trace_seeds_round_trip() {
    for s in seeds("parse_trace") {
        if let Ok(recs) = parse_trace(&s) {
            assert_eq!(parse_trace(&format_trace(&recs)).unwrap(), recs);
        }
    }
}

#[test]
fn override_seeds_do_not_panic() {
    for s in seeds("parse_override") {
        let _ = parse_override(&s);
        let sets: Vec<&str> = s.split('\n').collect();
        let mut cfg = SimConfig::default();
        if cfg.apply_overrides(&sets).is_ok() {
            let _ = cfg.resolve();
        }
    }
}
