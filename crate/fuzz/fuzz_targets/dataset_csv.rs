#![no_main]

use libfuzzer_sys::fuzz_target;
use sagd_mixing::harness::ingest_reader;

fuzz_target!(|data: &[u8]| {
    if data.len() > 4096 {
        return;
    }
    if let Ok(m) = ingest_reader(data, "fuzz", "y", 1e-3) {
        assert!(m.sigma().iter().all(|s| s.is_finite() && *s >= 0.0));
    }
});
