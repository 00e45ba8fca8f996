#![no_main]

use libfuzzer_sys::fuzz_target;
use sagd_mixing::harness::emit::{parse_trajectory_csv, trajectory_csv_string};

fuzz_target!(|data: &[u8]| {
    if let Ok(v) = parse_trajectory_csv(data) {
        let text = trajectory_csv_string(&v).expect("trajectory serialises");
        let back = parse_trajectory_csv(text.as_bytes()).expect("round trip parses");
        assert_eq!(back.len(), v.len());
    }
});
