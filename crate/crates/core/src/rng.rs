//! Seeded random streams.
//!
//! Every trial owns one stream derived from `(base_seed, trial_index)` by
//! [`trial_seed`]; the stream itself is ChaCha8 seeded through
//! `SeedableRng::seed_from_u64`. [`PRNG_DESCRIPTION`] is echoed verbatim into
//! report metadata.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const PRNG_DESCRIPTION: &str = "rand_chacha 0.9 ChaCha8Rng::seed_from_u64(trial_seed); \
trial_seed = splitmix64(base_seed + (trial_index + 1) * 0x9E3779B97F4A7C15) (wrapping u64 arithmetic)";

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 output function.
pub fn splitmix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of trial `trial_index` under `base_seed`.
pub fn trial_seed(base_seed: u64, trial_index: u64) -> u64 {
    splitmix64(base_seed.wrapping_add(trial_index.wrapping_add(1).wrapping_mul(GOLDEN_GAMMA)))
}

/// A random stream that remembers the seed it was created from.
#[derive(Debug, Clone)]
pub struct TrialRng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl TrialRng {
    pub fn from_seed(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn for_trial(base_seed: u64, trial_index: u64) -> Self {
        Self::from_seed(trial_seed(base_seed, trial_index))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

impl RngCore for TrialRng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}
