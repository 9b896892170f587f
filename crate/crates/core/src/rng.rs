//! Seeded randomness. Every stochastic draw in the crate goes through a
//! ChaCha stream keyed by a seed derived from `(root seed, purpose, index)`,
//! so resuming at any step reproduces the exact same draws.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub type StreamRng = ChaCha8Rng;

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a child seed for a named purpose and index.
pub fn derive(seed: u64, purpose: u64, index: u64) -> u64 {
    mix64(mix64(seed ^ mix64(purpose)).wrapping_add(index))
}

pub fn stream(seed: u64) -> StreamRng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal_vec<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

pub fn fill_normal<R: Rng + ?Sized>(rng: &mut R, out: &mut [f64], scale: f64) {
    for v in out {
        *v = scale * rng.sample::<f64, _>(StandardNormal);
    }
}

/// Purpose tags for [`derive`].
pub mod purpose {
    pub const SCENE: u64 = 1;
    pub const JITTER: u64 = 2;
    pub const TRAIN_STEP: u64 = 3;
    pub const SAMPLE: u64 = 4;
    pub const INIT: u64 = 5;
    pub const LORA_INIT: u64 = 6;
    pub const CLIP: u64 = 7;
    pub const PROBE: u64 = 8;
    pub const BATCH: u64 = 9;
}
