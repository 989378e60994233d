//! Seed derivation.
//!
//! All randomness in the crate flows from a single master seed. Every
//! component derives its own stream as `derive(master, label)` or
//! `derive_indexed(master, label, i)`, so adding a consumer never shifts the
//! stream of another, and sample `i` of a corpus is independent of how the
//! surrounding samples are scheduled.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// FNV-1a over the label bytes; cheap, stable, and collision-free for the
/// handful of fixed labels used here.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// SplitMix64 finalizer; decorrelates nearby seeds.
fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Sub-seed for a named component.
pub fn derive(master: u64, label: &str) -> u64 {
    splitmix(master ^ fnv1a(label.as_bytes()))
}

/// Sub-seed for the `i`-th item of a named component.
pub fn derive_indexed(master: u64, label: &str, index: u64) -> u64 {
    splitmix(derive(master, label).wrapping_add(splitmix(index)))
}

/// Deterministic RNG for a named component.
pub fn rng(master: u64, label: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(master, label))
}

/// Deterministic RNG for the `i`-th item of a named component.
pub fn rng_indexed(master: u64, label: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_indexed(master, label, index))
}
