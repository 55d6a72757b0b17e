#![no_main]

use edrsim::engine::trace::{format_trace, parse_trace};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &str| {
    if let Ok(records) = parse_trace(data) {
        let again = parse_trace(&format_trace(&records)).expect("re-parse");
        assert_eq!(again, records);
    }
});
