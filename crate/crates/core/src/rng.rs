//! Seed plumbing. One global seed fans out to per-component streams by
//! mixing in a stable hash of the component name, so ablations that share
//! a seed also share data order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// FNV-1a, stable across toolchains (unlike `DefaultHasher`).
pub fn name_hash(name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
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

pub fn derive_seed(seed: u64, component: &str) -> u64 {
    splitmix(seed ^ splitmix(name_hash(component)))
}

/// Seed for an indexed sub-stream (epoch, track, repeat ...).
pub fn derive_indexed(seed: u64, component: &str, index: u64) -> u64 {
    splitmix(derive_seed(seed, component) ^ splitmix(index.wrapping_add(1)))
}

pub fn rng_for(seed: u64, component: &str) -> Rng {
    Rng::seed_from_u64(derive_seed(seed, component))
}

pub fn rng_indexed(seed: u64, component: &str, index: u64) -> Rng {
    Rng::seed_from_u64(derive_indexed(seed, component, index))
}
