//! Seed derivation. Every stochastic operation owns a ChaCha generator seeded
//! from a 64-bit seed; child seeds are derived by hashing so that per-θ work
//! can run in any order and still reproduce bit-identical output.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SbiRng = ChaCha8Rng;

#[inline]
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Child seed for stream `index` of `master`.
#[inline]
pub fn child_seed(master: u64, index: u64) -> u64 {
    splitmix64(master ^ splitmix64(index.wrapping_add(0x632B_E59B_D9B4_E019)))
}

/// Child seed for a named operation.
pub fn tagged_seed(master: u64, tag: &str) -> u64 {
    // FNV-1a over the tag bytes
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    child_seed(master, h)
}

pub fn rng_from_seed(seed: u64) -> SbiRng {
    ChaCha8Rng::seed_from_u64(seed)
}
