//! Seeded, hierarchical random streams.
//!
//! Every randomized task draws from its own stream keyed by `(seed, path...)`,
//! so results never depend on worker scheduling or loop order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive an independent stream for the task identified by `path`.
pub fn substream(seed: u64, path: &[u64]) -> Rng {
    let mut key = splitmix(seed);
    for &p in path {
        key = splitmix(key ^ splitmix(p.wrapping_add(0x632B_E59B_D9B4_E019)));
    }
    ChaCha8Rng::seed_from_u64(key)
}

/// Stream tags so that unrelated stages never share a stream.
pub mod tag {
    pub const PARALLEL_ANALYSIS: u64 = 1;
    pub const BOOTSTRAP: u64 = 2;
    pub const MCMC: u64 = 3;
    pub const SIMULATION: u64 = 4;
}
