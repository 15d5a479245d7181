#![no_main]

use libfuzzer_sys::fuzz_target;
use spad::data::{decode_image_png, decode_label_png};

fuzz_target!(|data: &[u8]| {
    if let Ok(img) = decode_image_png(data) {
        assert!(img.as_slice().iter().all(|v| (0.0..=1.0).contains(v)));
    }
    let _ = decode_label_png(data);
});
