//! Keyed random streams.
//!
//! Every random decision in the simulator draws from a fresh ChaCha8 stream
//! whose seed is a SplitMix64 hash of a domain tag and a key tuple. Any
//! stream can therefore be recomputed on its own, in any order, from the
//! master seed and its coordinates (round, client, ...).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Separates the streams used by different subsystems.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    Init = 1,
    Freeze = 2,
    Cohort = 3,
    ClientSeed = 4,
    Minibatch = 5,
    Synth = 6,
    Partition = 7,
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Hashes `(domain, key[0], key[1], ...)` into one 64-bit value.
pub fn mix(domain: Domain, key: &[u64]) -> u64 {
    let mut h = splitmix64(domain as u64);
    for &k in key {
        h = splitmix64(h ^ splitmix64(k));
    }
    h
}

pub fn keyed(domain: Domain, key: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(domain, key))
}
