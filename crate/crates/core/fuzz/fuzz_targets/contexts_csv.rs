#![no_main]

use libfuzzer_sys::fuzz_target;
use silo_transfer::data::{parse_contexts_csv, write_contexts_csv};

fuzz_target!(|data: &[u8]| {
    if let Ok(rows) = parse_contexts_csv(data) {
        // Anything accepted must survive a write/read cycle.
        let mut out = Vec::new();
        write_contexts_csv(&mut out, &rows).unwrap();
        assert_eq!(parse_contexts_csv(out.as_slice()).unwrap(), rows);
    }
});
