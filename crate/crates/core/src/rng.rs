//! Random streams.
//!
//! Every random quantity in the crate is drawn from a [`ChaCha8Rng`] keyed by
//! a master seed (`seed_from_u64`) and a 64-bit stream id. Stream ids are
//! derived from a path of integers (replication, start, purpose, ...) with a
//! SplitMix64 fold, so a replication can be replayed without running the ones
//! before it.
//!
//! Frozen draw contract:
//! * uniform on `[0, 1)`: `rand`'s `StandardUniform` for `f64` (53 random bits),
//! * standard normal: `rand_distr::StandardNormal` (ziggurat),
//! * Student-t with `df` degrees of freedom: `Z / sqrt(W / df)` with `Z`
//!   standard normal drawn first and `W ~ ChiSquared(df)` drawn second.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};

pub type StreamRng = ChaCha8Rng;

/// Purpose tags used as the last component of a stream path.
pub mod purpose {
    pub const DATA: u64 = 1;
    pub const MH: u64 = 2;
    pub const MAMIS: u64 = 3;
    pub const EFFICIENCY: u64 = 4;
    pub const TUNE: u64 = 5;
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Stream id for a path of indices. The empty path maps to stream 0.
pub fn stream_id(path: &[u64]) -> u64 {
    path.iter().fold(0u64, |acc, &c| splitmix(acc ^ splitmix(c)))
}

pub fn substream(master_seed: u64, path: &[u64]) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(stream_id(path));
    rng
}

#[inline]
pub fn uniform<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.random::<f64>()
}

#[inline]
pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

pub fn student_t<R: Rng + ?Sized>(rng: &mut R, df: f64) -> f64 {
    let z = standard_normal(rng);
    let w: f64 = ChiSquared::new(df)
        .expect("degrees of freedom must be positive")
        .sample(rng);
    z / libm::sqrt(w / df)
}
