#![no_main]

use libfuzzer_sys::fuzz_target;
use spad::config::FileConfig;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(cfg) = FileConfig::parse(text) {
            // Rendering and re-parsing must be lossless.
            let again = FileConfig::parse(&cfg.to_text()).expect("rendered config parses");
            assert_eq!(again, cfg);
            let _ = cfg.spad.validate();
        }
    }
});
