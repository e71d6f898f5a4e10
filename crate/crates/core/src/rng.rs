//! Counter-based stream derivation. Every (seed, frame, device, purpose)
//! tuple gets its own generator, so a simulation is reproducible no matter
//! how frames or replications are scheduled.
//!
//! Streams are short (a handful of draws), so the generator is SplitMix64:
//! seeding is a single word copy, which matters with thousands of streams
//! per frame.

use rand::SeedableRng;
use rand_xoshiro::SplitMix64;

pub type SimRng = SplitMix64;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Traffic = 1,
    Schedule = 2,
    Harvest = 3,
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Key for one (frame, device, purpose) stream of a seeded run.
pub fn stream_key(seed: u64, frame: u64, device: u32, purpose: Purpose) -> u64 {
    let mut k = mix64(seed.wrapping_add(GOLDEN));
    k = mix64(k ^ frame.wrapping_mul(GOLDEN));
    k = mix64(k ^ ((device as u64) << 8 | purpose as u64));
    k
}

pub fn stream(seed: u64, frame: u64, device: u32, purpose: Purpose) -> SimRng {
    SimRng::seed_from_u64(stream_key(seed, frame, device, purpose))
}

/// A uniform draw in [0, 1) determined by `key`, for purposes that need a
/// single variate and would waste a full generator.
pub fn uniform(key: u64) -> f64 {
    (mix64(key ^ 0x5851_F42D_4C95_7F2D) >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Derives an independent child seed, e.g. for replications or restarts.
pub fn child_seed(seed: u64, index: u64) -> u64 {
    mix64(mix64(seed ^ 0xA5A5_5A5A_C3C3_3C3C).wrapping_add(index.wrapping_mul(GOLDEN)))
}
