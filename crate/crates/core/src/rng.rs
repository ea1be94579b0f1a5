//! Seeded random streams. Every stochastic component draws from a
//! [`SimRng`] derived from a 64-bit seed and a stream index, so runs are
//! reproducible bit for bit.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// Independent stream `index` of the generator seeded with `seed`.
/// Stream 0 is the plain seeded generator.
pub fn stream(seed: u64, index: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}
