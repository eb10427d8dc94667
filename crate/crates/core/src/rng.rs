//! Deterministic RNG streams.
//!
//! All randomness in the engine flows from a single master seed. Sub-streams
//! are derived by hashing (seed, purpose, index) with a fixed FNV-1a scheme so
//! results do not depend on the platform or the standard library's hasher.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(mut h: u64, bytes: &[u8]) -> u64 {
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// Derive a sub-seed from a master seed and a purpose label.
pub fn sub_seed(master: u64, purpose: &str) -> u64 {
    let h = fnv1a(FNV_OFFSET, &master.to_le_bytes());
    fnv1a(h, purpose.as_bytes())
}

/// Derive a sub-seed for the `index`-th item of a purpose stream
/// (e.g. one seed per training episode).
pub fn indexed_seed(master: u64, purpose: &str, index: u64) -> u64 {
    fnv1a(sub_seed(master, purpose), &index.to_le_bytes())
}

/// Deterministic RNG for a given seed.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
