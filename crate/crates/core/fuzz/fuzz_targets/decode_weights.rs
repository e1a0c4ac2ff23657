#![no_main]

use libfuzzer_sys::fuzz_target;
use pdn_core::model::{decode_weights, encode_weights};

fuzz_target!(|data: &[u8]| {
    if let Ok(net) = decode_weights(data) {
        let bytes = encode_weights(&net).expect("loaded network carries its peak");
        let again = decode_weights(&bytes).expect("re-encoded weights must decode");
        assert_eq!(again.config(), net.config());
        let (a, b) = (again.params(), net.params());
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
});
