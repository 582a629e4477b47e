#![no_main]

use libfuzzer_sys::fuzz_target;
use qnd_core::grid::{parse_grid, MAX_GRID_POINTS};

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(g) = parse_grid(text) {
            assert!(!g.is_empty() && g.len() <= MAX_GRID_POINTS);
            assert!(g.iter().all(|v| v.is_finite()));
        }
    }
});
