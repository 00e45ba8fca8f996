#![no_main]

use libfuzzer_sys::fuzz_target;
use sagd_mixing::harness::emit::{parse_table_csv, table_csv_string};

fuzz_target!(|data: &[u8]| {
    if let Ok(rows) = parse_table_csv(data) {
        let text = table_csv_string(&rows).expect("table serialises");
        let back = parse_table_csv(text.as_bytes()).expect("round trip parses");
        assert_eq!(back.len(), rows.len());
    }
});
