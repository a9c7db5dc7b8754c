#![no_main]

use libfuzzer_sys::{fuzz_target, Corpus};
use netid_core::network::parse_network_spec;
use netid_core::simulate::closed_loop_radius;

fuzz_target!(|data: &[u8]| -> Corpus {
    let Ok(text) = std::str::from_utf8(data) else {
        return Corpus::Reject;
    };
    if let Ok(spec) = parse_network_spec(text) {
        let _ = closed_loop_radius(&spec);
    }
    Corpus::Keep
});
