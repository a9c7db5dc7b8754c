#![no_main]

use libfuzzer_sys::{fuzz_target, Corpus};
use netid_core::mcem::parse_estimator_config;

fuzz_target!(|data: &[u8]| -> Corpus {
    let Ok(text) = std::str::from_utf8(data) else {
        return Corpus::Reject;
    };
    if let Ok(cfg) = parse_estimator_config(text) {
        cfg.check().expect("parsed config passes its own check");
    }
    Corpus::Keep
});
