#![no_main]

use libfuzzer_sys::fuzz_target;
use ofif::wav::decode_wav;

fuzz_target!(|data: &[u8]| {
    if let Ok(w) = decode_wav(std::io::Cursor::new(data)) {
        assert!(w.samples().iter().all(|v| v.is_finite()));
    }
});
