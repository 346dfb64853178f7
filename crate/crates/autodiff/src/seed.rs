//! Deterministic seed fan-out.
//!
//! One global seed expands into per-component sub-seeds via
//! `child = splitmix64(global ^ fnv1a64(tag))`. Both mixers are fixed,
//! documented functions, and ChaCha8 is specified bit-for-bit, so every
//! stream reproduces across runs and platforms.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Sub-seed for a named component of a run.
pub fn child_seed(global: u64, tag: &str) -> u64 {
    splitmix64(global ^ fnv1a64(tag.as_bytes()))
}

/// Stable, seedable generator used everywhere randomness is needed.
pub fn rng_from(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Generator for a named component.
pub fn rng_for(global: u64, tag: &str) -> ChaCha8Rng {
    rng_from(child_seed(global, tag))
}
