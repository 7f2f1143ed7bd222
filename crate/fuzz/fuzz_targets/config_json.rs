#![no_main]

use libfuzzer_sys::fuzz_target;
use ofif::model::{param_breakdown, ModelConfig};

// Accepted configs must be usable and survive a save/load cycle.
fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(cfg) = ModelConfig::from_json(text) else {
        return;
    };
    let _ = param_breakdown(&cfg);
    ModelConfig::from_json(&cfg.to_json()).expect("re-parse");
});
