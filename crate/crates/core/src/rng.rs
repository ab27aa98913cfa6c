//! Keyed random streams.
//!
//! Every stochastic step draws from a ChaCha stream whose seed is a mix of the
//! run seed and a small key (purpose, round, client, ...). Streams never depend
//! on how many numbers another step consumed, so results do not depend on the
//! order in which clients or cells are executed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Purpose tags keep streams for different steps disjoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Init = 1,
    Synthetic = 2,
    Holdout = 3,
    Split = 4,
    Eliminate = 5,
    Shuffle = 6,
    Teacher = 7,
    Sample = 8,
    Cell = 9,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a seed with a key path into a single 64-bit stream seed.
pub fn derive_seed(seed: u64, purpose: Purpose, key: &[u64]) -> u64 {
    let mut h = splitmix(seed ^ splitmix(purpose as u64));
    for &k in key {
        h = splitmix(h ^ splitmix(k.wrapping_add(0x632B_E59B_D9B4_E019)));
    }
    h
}

pub fn stream(seed: u64, purpose: Purpose, key: &[u64]) -> StreamRng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, purpose, key))
}
