#![no_main]

use libfuzzer_sys::fuzz_target;
use probekit::lab::experiment::ToyRunConfig;

fuzz_target!(|data: &[u8]| {
    if let Ok(cfg) = serde_json::from_slice::<ToyRunConfig>(data) {
        let _ = cfg.synthetic.validate();
        let _ = cfg.probe.validate();
    }
});
