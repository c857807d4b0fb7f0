#![no_main]

use libfuzzer_sys::fuzz_target;
use silo_transfer::network::{deserialize_params, serialize_params};

fuzz_target!(|data: &[u8]| {
    if let Ok(params) = deserialize_params(data) {
        assert_eq!(serialize_params(&params), data);
    }
});
