#![no_main]

use libfuzzer_sys::fuzz_target;
use netid_core::simulate::read_signals_csv;

fuzz_target!(|data: &[u8]| {
    if let Ok(table) = read_signals_csv(data) {
        let n = table.w.first().map_or(0, Vec::len);
        assert!(table.w.iter().chain(&table.r).all(|c| c.len() == n));
    }
});
