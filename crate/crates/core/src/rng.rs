//! Seeded random streams.
//!
//! Every drop of an experiment gets its own generator derived from the master
//! seed and a list of integer tags (drop index, purpose, ...). Derivation is a
//! SplitMix64 fold over the tags, so streams do not depend on the order in
//! which workers pick up drops.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::tensor::CMat;

pub type SimRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for the stream identified by `tags` under `master`.
pub fn derive_seed(master: u64, tags: &[u64]) -> u64 {
    tags.iter()
        .fold(splitmix64(master), |acc, &t| splitmix64(acc ^ splitmix64(t)))
}

pub fn stream(master: u64, tags: &[u64]) -> SimRng {
    SimRng::seed_from_u64(derive_seed(master, tags))
}

/// Stream purposes used as the second tag.
pub mod purpose {
    pub const CHANNEL: u64 = 1;
    pub const BOOK: u64 = 2;
    pub const NOISE: u64 = 3;
    pub const INIT: u64 = 4;
    pub const ANCHOR: u64 = 5;
    pub const DATASET: u64 = 6;
    pub const CNN: u64 = 7;
    pub const OPT: u64 = 8;
}

/// Circularly-symmetric complex Gaussian with variance `var`.
pub fn cn<R: Rng + ?Sized>(rng: &mut R, var: f64) -> Complex64 {
    let s = (var / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(s * re, s * im)
}

/// Matrix with i.i.d. `CN(0, var)` entries, filled column by column.
pub fn cn_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize, var: f64) -> CMat {
    let mut m = CMat::zeros(rows, cols);
    for z in m.iter_mut() {
        *z = cn(rng, var);
    }
    m
}
