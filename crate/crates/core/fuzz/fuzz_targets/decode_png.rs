#![no_main]

use libfuzzer_sys::fuzz_target;
use pdn_core::imageio::{decode_png, encode_png};

fuzz_target!(|data: &[u8]| {
    if let Ok(img) = decode_png(data) {
        let bytes = encode_png(&img).expect("decoded image must encode");
        let again = decode_png(&bytes).expect("re-encoded PNG must decode");
        assert_eq!(again.quantize(), img.quantize());
    }
});
