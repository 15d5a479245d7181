#![no_main]

use libfuzzer_sys::fuzz_target;
use spad::data::parse_corpus_manifest;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(m) = parse_corpus_manifest(text) {
            for id in m.train_ids.iter().chain(&m.test_ids) {
                assert!(!id.contains('/') && !id.contains('\\') && id != "..");
            }
        }
    }
});
