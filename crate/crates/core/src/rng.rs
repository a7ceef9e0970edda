//! Seed derivation. Every random quantity in a run is a pure function of the
//! master seed and an index path, so work can be split across threads
//! without changing results.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Folds an index path into a child seed.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    path.iter().fold(mix64(master), |acc, &k| mix64(acc ^ mix64(k)))
}

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent ChaCha stream for one data row.
pub fn row_stream(base: &ChaCha8Rng, row: u64) -> ChaCha8Rng {
    let mut rng = base.clone();
    rng.set_stream(row);
    rng.set_word_pos(0);
    rng
}

/// Labels for the top-level streams a trial draws from.
pub mod stream {
    pub const INSTANCE: u64 = 1;
    pub const DATA: u64 = 2;
}
