#![no_main]

use std::sync::OnceLock;

use libfuzzer_sys::fuzz_target;
use silo_transfer::data::{generator_schema, parse_students_csv, GeneratorConfig, Schema};

fn schema() -> &'static Schema {
    static SCHEMA: OnceLock<Schema> = OnceLock::new();
    SCHEMA.get_or_init(|| generator_schema(&GeneratorConfig::default()))
}

fuzz_target!(|data: &[u8]| {
    let _ = parse_students_csv(data, schema());
});
