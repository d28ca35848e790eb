//! Seed derivation. Every random stream is addressed by a base seed plus a
//! path of integers, so results never depend on call order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Mixes `parts` into `base`. Distinct paths give unrelated seeds.
pub fn derive(base: u64, parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(splitmix(base), |acc, &p| splitmix(acc ^ splitmix(p.wrapping_add(0x632B_E59B_D9B4_E019))))
}

pub fn stream(base: u64, parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(base, parts))
}

/// Stream labels, kept distinct so sibling streams never alias.
pub(crate) mod label {
    pub const NOISE: u64 = 1;
    pub const LATENT: u64 = 2;
    pub const INIT_G: u64 = 3;
    pub const INIT_D: u64 = 4;
    pub const TRAIN_D: u64 = 5;
    pub const TRAIN_G: u64 = 6;
    pub const DATA: u64 = 7;
}
