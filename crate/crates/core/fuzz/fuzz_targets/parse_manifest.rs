#![no_main]

use libfuzzer_sys::fuzz_target;
use pdn_core::patchwork::Manifest;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(m) = Manifest::parse(text) {
        let printed = m.to_text();
        let again = Manifest::parse(&printed).expect("printed manifest must parse");
        assert_eq!(again.to_text(), printed);
    }
});
