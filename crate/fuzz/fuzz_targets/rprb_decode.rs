#![no_main]

use libfuzzer_sys::fuzz_target;
use probekit::repr::{parse_header, ReprMatrix};

fuzz_target!(|data: &[u8]| {
    let header = parse_header(data);
    if let Ok(m) = ReprMatrix::from_bytes(data) {
        assert_eq!(header.ok(), Some(m.header()));
        assert_eq!(m.to_bytes(), data);
    }
});
