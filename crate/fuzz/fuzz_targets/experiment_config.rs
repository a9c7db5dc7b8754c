#![no_main]

use libfuzzer_sys::{fuzz_target, Corpus};
use netid_core::harness::parse_experiment_config;

fuzz_target!(|data: &[u8]| -> Corpus {
    let Ok(text) = std::str::from_utf8(data) else {
        return Corpus::Reject;
    };
    if let Ok(cfg) = parse_experiment_config(text) {
        let _ = cfg.problem();
        let _ = cfg.replicate_seed(cfg.replicates);
    }
    Corpus::Keep
});
