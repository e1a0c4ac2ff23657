//! Seed derivation and keyed random streams.
//!
//! Every random decision in the crate flows from one user seed. Each consumer
//! derives its own sub-seed from a fixed domain tag, and per-item streams are
//! selected through ChaCha's 64-bit stream id, so draws never depend on
//! evaluation order or thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Domain tags keeping the different consumers of one seed independent.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    Noise = 0x6e_6f69_7365,
    PatchAnchors = 0x70_6174_6368,
    Split = 0x73_706c_6974,
    Shuffle = 0x73_6875_6666,
    Init = 0x696e_6974,
    Evaluation = 0x6576_616c,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct NoiseSeed(pub u64);

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive_seed(seed: u64, domain: Domain) -> u64 {
    splitmix64(seed ^ splitmix64(domain as u64))
}

/// Independent seed for item `index` of a collection (one image of a corpus, say).
pub fn sub_seed(seed: u64, index: u64) -> u64 {
    splitmix64(splitmix64(seed) ^ index.wrapping_mul(0xd1b5_4a32_d192_ed03))
}

/// Generator for `(seed, domain)`, positioned on stream `stream`.
pub fn keyed_stream(seed: u64, domain: Domain, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, domain));
    rng.set_stream(stream);
    rng
}

/// Reusable base generator; `at(stream)` avoids re-expanding the seed per item.
#[derive(Clone)]
pub struct StreamFamily {
    base: ChaCha8Rng,
}

impl StreamFamily {
    pub fn new(seed: u64, domain: Domain) -> Self {
        StreamFamily {
            base: ChaCha8Rng::seed_from_u64(derive_seed(seed, domain)),
        }
    }

    pub fn at(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = self.base.clone();
        rng.set_stream(stream);
        rng.set_word_pos(0);
        rng
    }
}
