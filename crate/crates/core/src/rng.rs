//! Seed derivation. Every random stream in the pipeline is a ChaCha8 generator
//! seeded from the root seed through named, indexed sub-streams, so any stage
//! can be re-run on its own and parallel work never shares a generator.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub type Rng = ChaCha8Rng;

/// 64-bit FNV-1a. Stable across platforms and toolchains, unlike `DefaultHasher`.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of the sub-stream `name` under `parent`.
pub fn derive(parent: u64, name: &str) -> u64 {
    splitmix(parent ^ splitmix(fnv1a(name.as_bytes())))
}

/// Seed of the `index`-th child stream under `parent`.
pub fn derive_index(parent: u64, index: u64) -> u64 {
    splitmix(splitmix(parent) ^ index.wrapping_mul(0xd1b5_4a32_d192_ed03))
}

pub fn rng_from(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_vec<R: rand::Rng + ?Sized>(rng: &mut R, len: usize) -> Vec<f64> {
    (0..len).map(|_| StandardNormal.sample(rng)).collect()
}
