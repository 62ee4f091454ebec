//! Seeded random streams.
//!
//! Every independent unit of randomness (one synthetic ad, one EM restart)
//! draws from its own ChaCha8 stream: the 64-bit run seed fixes the key and a
//! 64-bit stream id selects the counter space. Output depends only on
//! `(seed, stream)`, never on the order in which units are processed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Recorded in report headers so runs can be reproduced.
pub const RNG_ALGORITHM: &str = "chacha8/stream64";

pub type StreamRng = ChaCha8Rng;

pub fn stream_rng(seed: u64, stream: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Stream id for ad `ad` of app `app` in a synthetic scenario.
pub fn ad_stream(app: u32, ad: u32) -> u64 {
    (u64::from(app) << 32) | u64::from(ad)
}
