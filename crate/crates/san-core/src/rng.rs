//! Seed derivation and deterministic random sampling.
//!
//! Every stochastic step in the crate draws from a `ChaCha8Rng` whose seed is
//! derived from the run seed and a role tag, so independent streams (init,
//! noise, shuffling, per-query noise) never alias and results are reproducible
//! across platforms.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Role tags for deriving sub-seeds from a run seed.
pub mod tags {
    pub const INIT_G1: u64 = 0x01;
    pub const INIT_D1: u64 = 0x02;
    pub const INIT_R1: u64 = 0x03;
    pub const INIT_SIAMESE: u64 = 0x04;
    pub const INIT_G2: u64 = 0x05;
    pub const INIT_D2: u64 = 0x06;
    pub const INIT_R2: u64 = 0x07;
    pub const NOISE: u64 = 0x10;
    pub const SHUFFLE: u64 = 0x11;
    pub const SIAMESE_BATCH: u64 = 0x12;
    pub const QUERY_NOISE: u64 = 0x20;
    pub const SYNTH: u64 = 0x30;
    pub const SPLIT: u64 = 0x31;
    pub const PAIRS: u64 = 0x32;
}

/// Mix a base seed with a tag (splitmix64 finalizer).
pub fn derive_seed(base: u64, tag: u64) -> u64 {
    let mut z = base
        .wrapping_add(tag.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seeded generator for the given role.
pub fn rng_for(base: u64, tag: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, tag))
}

/// Draw `n` standard-normal samples.
pub fn sample_standard_normal(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    (0..n).map(|_| normal.sample(rng)).collect()
}

/// Draw `n` normal samples with the given standard deviation.
pub fn sample_normal(rng: &mut ChaCha8Rng, n: usize, std: f64) -> Vec<f64> {
    if std == 0.0 {
        return vec![0.0; n];
    }
    let normal = Normal::new(0.0, std).expect("normal std must be finite and non-negative");
    (0..n).map(|_| normal.sample(rng)).collect()
}
