//! Seeded randomness.
//!
//! All randomness in the crate comes from ChaCha8 (`rand_chacha`) seeded via
//! `seed_from_u64`. Independent streams (one per pruning candidate, per epoch,
//! per anomaly split) are derived with a SplitMix64 finalizer so results do not
//! depend on the order in which streams are consumed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derives the seed of sub-stream `stream` from `base`.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
