#![no_main]

use std::io::Cursor;

use libfuzzer_sys::fuzz_target;
use probekit::dataset::parse_nlu_jsonl;
use probekit::{Schema, Split};

fuzz_target!(|data: &[u8]| {
    for schema in [Schema::Snli, Schema::Mnli, Schema::Fever] {
        if let Ok(ds) = parse_nlu_jsonl(Cursor::new(data), schema, Split::Train) {
            assert_eq!(ds.pairs.len() + ds.skipped_lines, ds.total_lines);
        }
    }
});
