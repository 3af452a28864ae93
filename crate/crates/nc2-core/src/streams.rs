//! Deterministic RNG substreams.
//!
//! Every random draw in the library is keyed by a single `u64` master seed.
//! Components derive independent ChaCha8 streams from `(seed, tag)` pairs,
//! and Monte Carlo trials derive per-trial seeds from `(seed, trial index)`,
//! so any trial can be regenerated in isolation and execution order never
//! affects results.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tag: system parameter draws (state transition, observation, bases).
pub const STREAM_SYNTHESIS: u64 = 0x5359_5354_454d_0001;
/// Stream tag: schedule coefficients and simulated process/measurement noise.
pub const STREAM_NOISE: u64 = 0x4e4f_4953_4500_0002;
/// Stream tag: initial-covariance perturbation factors.
pub const STREAM_PERTURB: u64 = 0x5045_5254_5542_0003;
/// Stream tag: synthetic tracking scenarios (dropout masks, detection noise).
pub const STREAM_SCENARIO: u64 = 0x5343_454e_4500_0004;

/// SplitMix64 finalizer; the standard 64-bit avalanche mix.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for trial `j` of a suite keyed by `seed`. Depends only on the pair.
pub fn trial_seed(seed: u64, trial: u64) -> u64 {
    splitmix64(seed ^ splitmix64(trial.wrapping_mul(0x9e37_79b9_7f4a_7c15)))
}

/// An independent ChaCha8 stream for `(seed, tag)`.
pub fn substream(seed: u64, tag: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix64(seed ^ splitmix64(tag)))
}
