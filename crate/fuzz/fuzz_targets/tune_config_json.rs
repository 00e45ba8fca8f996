#![no_main]

use libfuzzer_sys::fuzz_target;
use sagd_mixing::TuneConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(c) = TuneConfig::from_json_str(text) {
        // Grid sizes are unbounded in the input; only touch the axes.
        let _ = (c.alpha.values().len(), c.beta.values().len());
    }
});
