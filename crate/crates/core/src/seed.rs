//! Deterministic seed derivation.
//!
//! Every random stream in a run is keyed by the master seed plus a tuple of
//! indices (round, edge round, entity, ...), so results never depend on the
//! order in which work is scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tags. Distinct tags keep streams that share index tuples apart.
pub mod tag {
    pub const BATCH: u64 = 0x4241_5443;
    pub const MASK: u64 = 0x4d41_534b;
    pub const CHANNEL: u64 = 0x4348_414e;
    pub const AIRCOMP_CHANNEL: u64 = 0x4149_5243;
    pub const AIRCOMP_NOISE: u64 = 0x4e4f_4953;
    pub const BEAMFORM: u64 = 0x4245_414d;
    pub const CPU: u64 = 0x4350_5521;
    pub const DATA: u64 = 0x4441_5441;
    pub const INIT: u64 = 0x494e_4954;
    pub const PROBE: u64 = 0x5052_4f42;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a master seed with a path of indices into a child seed.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(master), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

pub fn rng_for(master: u64, path: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, path))
}
