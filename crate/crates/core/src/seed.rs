//! Deterministic seed streams.
//!
//! Every randomized operation takes one root seed; independent streams (an
//! epoch, a composition, a paste) are derived with [`derive`] so they can be
//! regenerated out of order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of sub-stream `stream` under `root`.
pub fn derive(root: u64, stream: u64) -> u64 {
    mix(mix(root.wrapping_add(0x9e37_79b9_7f4a_7c15)) ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

pub fn rng(root: u64, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(root, stream))
}
