#![no_main]

use hoplite_core::trace::parse_demand_trace;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(rows) = parse_demand_trace(text) {
            let width = rows.first().map_or(0, Vec::len);
            for row in &rows {
                assert_eq!(row.len(), width);
                assert!(row.iter().all(|v| v.is_finite() && *v >= 0.0));
            }
        }
    }
});
