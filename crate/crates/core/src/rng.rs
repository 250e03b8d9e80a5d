//! Seeded random streams.
//!
//! Every stochastic component draws from ChaCha8, which produces the same
//! stream on every platform. Independent components derive their own seed
//! from a parent seed and a stream label, so adding draws in one component
//! never shifts the numbers another component sees.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Identity of the generator, recorded in trace metadata.
pub const GENERATOR_NAME: &str = "rand_chacha::ChaCha8Rng (seed_from_u64, splitmix64 stream derivation)";

pub type Rng = ChaCha8Rng;

/// splitmix64 finaliser.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a child seed for a labelled sub-stream.
pub fn derive_seed(parent: u64, stream: u64) -> u64 {
    mix64(parent ^ mix64(stream))
}

pub fn rng_from_seed(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn substream(parent: u64, stream: u64) -> Rng {
    rng_from_seed(derive_seed(parent, stream))
}
