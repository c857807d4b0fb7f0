#![no_main]

use libfuzzer_sys::fuzz_target;
use silo_transfer::data::Schema;

fuzz_target!(|data: &[u8]| {
    if let Ok(schema) = serde_json::from_slice::<Schema>(data) {
        let _ = schema.validate();
    }
});
