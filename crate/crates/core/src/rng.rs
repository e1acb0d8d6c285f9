//! Seeded random streams.
//!
//! Every stochastic step draws from a [`Stream`] derived from a root seed and
//! a path of integers, so concurrent schedules reproduce the sequential one.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

/// Tags separating independent uses of the same root seed.
pub mod tag {
    pub const CATALOG: u64 = 0x01;
    pub const INTENT: u64 = 0x02;
    pub const CONTEXT: u64 = 0x03;
    pub const DISTILL: u64 = 0x04;
    pub const GRPO_SESSION: u64 = 0x05;
    pub const GRPO_MEMBER: u64 = 0x06;
    pub const BENCHMARK: u64 = 0x07;
    pub const EVAL: u64 = 0x08;
    pub const SIMULATE: u64 = 0x09;
    pub const TRENDS: u64 = 0x0a;
    pub const FLYWHEEL: u64 = 0x0b;
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mix a root seed with a path of integers into a 64-bit stream key.
pub fn derive(seed: u64, path: &[u64]) -> u64 {
    path.iter().fold(splitmix(seed), |acc, p| splitmix(acc ^ splitmix(*p)))
}

/// Independent stream for `(seed, path…)`.
pub fn stream(seed: u64, path: &[u64]) -> Stream {
    ChaCha8Rng::seed_from_u64(derive(seed, path))
}

/// FNV-1a over bytes; used for stable content hashes.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}
