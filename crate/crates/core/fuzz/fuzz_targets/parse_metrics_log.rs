#![no_main]

use ckptmerge::io::metrics_log::parse_metrics_log;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    if let Ok(log) = parse_metrics_log(text) {
        assert!(log.rows.windows(2).all(|w| w[0].step < w[1].step));
        assert!(log.rows.iter().all(|r| r.train_loss > 0.0));
    }
});
