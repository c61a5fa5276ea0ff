//! Deterministic derivation of independent random streams from one base seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

// Stream tags. Keeping them distinct decouples e.g. service generation from
// the number of cells.
pub const SERVICES: u64 = 0x5e41;
pub const POPULATION: u64 = 0x7090;
pub const PERMUTATION: u64 = 0x9e47;
pub const ARRIVALS: u64 = 0xa441;
pub const AGENT_INIT: u64 = 0xa6e1;
pub const EXPLORATION: u64 = 0xe491;
pub const REPLAY: u64 = 0x4e91;
pub const BASELINE: u64 = 0xba5e;
pub const EPISODE: u64 = 0xe915;
pub const CHECKS: u64 = 0xc4ec;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(splitmix64(base), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

pub fn stream(base: u64, parts: &[u64]) -> SimRng {
    SimRng::seed_from_u64(derive_seed(base, parts))
}
