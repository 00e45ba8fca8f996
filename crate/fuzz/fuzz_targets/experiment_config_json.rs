#![no_main]

use libfuzzer_sys::fuzz_target;
use sagd_mixing::harness::ExperimentConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(c) = ExperimentConfig::from_json_str(text) {
        let again = serde_json::to_string(&c).expect("config serialises");
        assert!(ExperimentConfig::from_json_str(&again).is_ok());
    }
});
