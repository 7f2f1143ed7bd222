#![no_main]

use libfuzzer_sys::fuzz_target;
use ofif::model::{read_weights, write_weights};

// Anything that parses must re-serialize to the same bytes.
fuzz_target!(|data: &[u8]| {
    if let Ok(w) = read_weights(data) {
        let out = write_weights(&w).expect("parsed weights serialize");
        assert_eq!(out, data);
    }
});
