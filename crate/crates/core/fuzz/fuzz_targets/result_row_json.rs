#![no_main]

use libfuzzer_sys::fuzz_target;
use silo_transfer::experiment::ResultRow;

fuzz_target!(|data: &[u8]| {
    let _ = serde_json::from_slice::<ResultRow>(data);
});
