#![no_main]

use libfuzzer_sys::fuzz_target;
use probekit::OnlineCodeConfig;

fuzz_target!(|data: &[u8]| {
    if let Ok(cfg) = serde_json::from_slice::<OnlineCodeConfig>(data) {
        let _ = cfg.validate();
    }
});
