#![no_main]

use libfuzzer_sys::fuzz_target;
use probekit::analysis::{
    correlation_report, gamma_sweep, read_records_csv, Aggregation, GroupKey,
};

fuzz_target!(|data: &[u8]| {
    if let Ok(records) = read_records_csv(data) {
        let report = correlation_report(
            &records,
            &[GroupKey::Bias, GroupKey::Dataset],
            Aggregation::Median,
        );
        for row in &report.rows {
            if let Some(rho) = row.rho {
                assert!((-1.0..=1.0).contains(&rho));
            }
        }
        let _ = gamma_sweep(&records, &[]);
    }
});
