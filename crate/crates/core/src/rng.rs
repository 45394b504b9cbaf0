//! Deterministic seed derivation.
//!
//! Every RNG stream in the toolkit is a [`ChaCha8Rng`] seeded from a value
//! derived here. Streams are identified by `(master_seed, tag, index)`
//! tuples so that results never depend on scheduling or worker count, and
//! so checkpoints can reconstruct any stream from plain integers.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tags. Each distinct purpose gets its own tag so streams never
/// collide even when their indices do.
pub mod tag {
    pub const INIT_POPULATION: u64 = 0x01;
    pub const TRAIN: u64 = 0x02;
    pub const GENETIC_OPS: u64 = 0x03;
    pub const GEN_TRACES: u64 = 0x10;
    pub const DESYNC: u64 = 0x11;
    pub const BALANCE: u64 = 0x12;
    pub const ATTACK_FOLD: u64 = 0x20;
    pub const GRID_CELL: u64 = 0x30;
}

/// SplitMix64 step. Stable across platforms and releases.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes an arbitrary list of seed parts into one 64-bit seed.
pub fn mix(parts: &[u64]) -> u64 {
    let mut state = 0x243F_6A88_85A3_08D3; // must differ from splitmix increment
    for &part in parts {
        state = splitmix64(state ^ splitmix64(part));
    }
    state
}

/// RNG for the stream `(master_seed, tag, index)`.
pub fn stream(master_seed: u64, tag: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(&[master_seed, tag, index]))
}

/// RNG seeded directly from a single value.
pub fn from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
