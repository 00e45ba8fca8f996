#![no_main]

use libfuzzer_sys::fuzz_target;
use sagd_mixing::MomentSpec;

fuzz_target!(|data: &[u8]| {
    if let Ok(m) = MomentSpec::from_json_slice(data) {
        let text = m.to_json_string().expect("valid model serialises");
        let back = MomentSpec::from_json_str(&text).expect("serialised model parses");
        assert_eq!(back.sigma(), m.sigma());
        assert_eq!(back.kurt(), m.kurt());
    }
});
