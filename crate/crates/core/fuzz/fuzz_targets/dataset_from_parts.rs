#![no_main]

use libfuzzer_sys::arbitrary::{self, Arbitrary};
use libfuzzer_sys::fuzz_target;
use pdn_core::patchwork::PatchDataset;

#[derive(Arbitrary, Debug)]
struct Input<'a> {
    manifest: &'a str,
    blob: &'a [u8],
}

fuzz_target!(|input: Input| {
    if let Ok(ds) = PatchDataset::from_parts(input.manifest, input.blob) {
        assert_eq!(ds.blob().len(), input.blob.len());
    }
});
