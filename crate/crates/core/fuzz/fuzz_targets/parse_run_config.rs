#![no_main]

use libfuzzer_sys::fuzz_target;
use pdn_core::config::RunConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let mut config = RunConfig::default();
    if config.apply_text(text).is_ok() {
        let printed = config.to_text();
        let mut again = RunConfig::default();
        again.apply_text(&printed).expect("printed config must parse");
        assert_eq!(again.to_text(), printed);
    }
});
