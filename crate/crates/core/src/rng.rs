//! Named random sub-streams derived from a single run seed.
//!
//! Every consumer of randomness (data shuffling, initialization, latent
//! noise, bootstrap resampling) asks for its own stream by name, so adding
//! draws to one stream never perturbs another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

pub const DATA_SHUFFLE: &str = "data-shuffle";
pub const INIT: &str = "init";
pub const NOISE: &str = "eps-noise";
pub const BOOTSTRAP: &str = "bootstrap";
/// Per-example latent noise at generation time, split by example index.
pub const GENERATE: &str = "generate";

/// SplitMix64 finalizer.
fn mix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Derives the seed of the stream `name` from `seed`.
pub fn derive_seed(seed: u64, name: &str) -> u64 {
    // FNV-1a over the name, then mixed with the run seed.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    mix(seed ^ mix(h))
}

pub fn stream(seed: u64, name: &str) -> StreamRng {
    StreamRng::seed_from_u64(derive_seed(seed, name))
}

/// A stream further split by an index (per epoch, per example, per category).
pub fn indexed_stream(seed: u64, name: &str, index: u64) -> StreamRng {
    StreamRng::seed_from_u64(mix(derive_seed(seed, name) ^ mix(index)))
}
