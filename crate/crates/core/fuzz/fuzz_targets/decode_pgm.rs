#![no_main]

use libfuzzer_sys::fuzz_target;
use pdn_core::imageio::{decode_pgm, encode_pgm};

fuzz_target!(|data: &[u8]| {
    if let Ok(img) = decode_pgm(data) {
        // anything that decodes must survive a re-encode unchanged
        let again = decode_pgm(&encode_pgm(&img)).expect("re-encoded PGM must decode");
        assert_eq!(again.quantize(), img.quantize());
    }
});
