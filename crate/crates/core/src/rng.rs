//! Counter-based random streams.
//!
//! Every Monte Carlo quantity is keyed by `(seed, stream)`; ChaCha's 64-bit
//! stream id gives independent, reproducible sequences no matter how path
//! batches are scheduled across workers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub type PathRng = ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StreamKey {
    pub seed: u64,
    pub stream: u64,
}

impl StreamKey {
    pub fn new(seed: u64) -> Self {
        Self { seed, stream: 0 }
    }

    /// Derived key for a named sub-computation or a path index.
    pub fn child(self, tag: u64) -> Self {
        Self {
            seed: self.seed,
            stream: splitmix64(self.stream ^ splitmix64(tag.wrapping_add(0x9e37_79b9))),
        }
    }

    pub fn rng(self) -> PathRng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }
}

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stable tags for the sub-computations that share a seed.
pub mod tags {
    pub const JUMPS: u64 = 1;
    pub const PATHS: u64 = 2;
    pub const MARKS: u64 = 3;
    pub const PICARD: u64 = 4;
    pub const GRADIENT: u64 = 5;
    pub const CHECKS: u64 = 6;
}
