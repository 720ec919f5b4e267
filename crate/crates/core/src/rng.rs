//! Deterministic stream derivation.
//!
//! Every stochastic operation takes an explicit generator. Parallel work
//! (index tables, episode grids) derives one independent stream per task
//! from a 64-bit master seed plus a list of labels, so results never depend
//! on thread scheduling.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The generator used throughout: counter-based, platform-stable, cheap to
/// fork by reseeding.
pub type Stream = ChaCha8Rng;

/// SplitMix64 finalizer; the standard 64-bit avalanche mix.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// FNV-1a over a label so string identifiers (policy names, purposes) can
/// participate in seed derivation without collisions in practice.
pub fn label_hash(label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Derives a child seed: fold each part into the running state through a
/// SplitMix64 round. Deterministic in the part order.
pub fn derive_seed(master: u64, parts: &[u64]) -> u64 {
    let mut state = splitmix64(master);
    for p in parts {
        state = splitmix64(state ^ *p);
    }
    state
}

/// A ready-to-use stream for `(master, parts)`.
pub fn derive_stream(master: u64, parts: &[u64]) -> Stream {
    Stream::seed_from_u64(derive_seed(master, parts))
}
