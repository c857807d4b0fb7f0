#![no_main]

use libfuzzer_sys::fuzz_target;
use silo_transfer::experiment::TransferArtifact;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(a) = TransferArtifact::from_json(text) {
        let again = TransferArtifact::from_json(&a.to_json().unwrap()).unwrap();
        assert_eq!(again, a);
    }
});
