#![no_main]

use std::io::Cursor;

use libfuzzer_sys::fuzz_target;
use probekit::probing::parse_probing_jsonl;

fuzz_target!(|data: &[u8]| {
    if let Ok(examples) = parse_probing_jsonl(Cursor::new(data)) {
        assert!(examples.iter().all(|e| e.prop_label <= 1));
    }
});
