//! Deterministic seed derivation and RNG construction.
//!
//! All randomness flows through ChaCha8 streams seeded from 64-bit values
//! derived with a SplitMix64-style mix, so every sample/epoch/parameter
//! draw is a pure function of (base seed, labels).

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer; decorrelates structured seed inputs.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a child seed from a base seed and a stream of labels.
pub fn derive_seed(base: u64, labels: &[u64]) -> u64 {
    let mut state = mix64(base ^ 0x5851_f42d_4c95_7f2d);
    for &l in labels {
        state = mix64(state ^ mix64(l));
    }
    state
}

/// Seeded ChaCha8 stream; stable across platforms and releases.
pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Stream for one sample of one split.
pub fn sample_rng(base: u64, split: u64, index: u64) -> ChaCha8Rng {
    rng_from_seed(derive_seed(base, &[split, index]))
}
