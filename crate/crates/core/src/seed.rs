//! Splittable seed derivation.
//!
//! Every random stream in an experiment is keyed by `(master, n, rep, stream)`
//! and mixed through SplitMix64, so a replication's draws do not depend on
//! which thread ran it or in which order. The sampling-time stream and the
//! price-path stream never share a key, which keeps the observation times
//! independent of the Brownian drivers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Stream {
    Grid = 1,
    Path = 2,
    MonteCarlo = 3,
}

#[inline]
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives the seed of one stream of one replication.
pub fn derive(master: u64, n: u64, rep: u64, stream: Stream) -> u64 {
    let mut h = splitmix64(master);
    for word in [n, rep, stream as u64] {
        h = splitmix64(h ^ word);
    }
    h
}

pub fn rng_from_seed(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}
