//! Seed derivation. Every random draw in a run comes from a ChaCha stream
//! keyed by a seed derived here, so runs replay bit-exactly.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Folds a list of labels into a base seed.
pub fn derive_seed(base: u64, labels: &[u64]) -> u64 {
    labels.iter().fold(mix(base), |acc, &l| mix(acc ^ mix(l)))
}

pub fn rng_from(base: u64, labels: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, labels))
}

// Stream labels, kept distinct so independent draws never share a key.
pub(crate) const STREAM_BASE_WEIGHTS: u64 = 1;
pub(crate) const STREAM_MIXING: u64 = 2;
pub(crate) const STREAM_ADAPTER_INIT: u64 = 3;
pub(crate) const STREAM_GROW: u64 = 4;
pub(crate) const STREAM_PLANTED: u64 = 5;
pub(crate) const STREAM_INPUTS: u64 = 6;
pub(crate) const STREAM_NOISE: u64 = 7;
