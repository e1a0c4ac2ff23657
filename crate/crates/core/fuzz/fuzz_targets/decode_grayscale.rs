#![no_main]

use libfuzzer_sys::fuzz_target;
use pdn_core::imageio::decode_grayscale;

fuzz_target!(|data: &[u8]| {
    if let Ok(img) = decode_grayscale(data) {
        assert_eq!(img.pixels().len(), img.width() * img.height());
        assert!(img.pixels().iter().all(|p| p.is_finite() && *p >= 0.0));
    }
});
