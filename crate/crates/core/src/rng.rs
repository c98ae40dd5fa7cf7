//! Counter-based random streams.
//!
//! Every chain owns a ChaCha stream keyed by `(seed, stream id)`, so a chain's
//! draws never depend on how chains are scheduled across workers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::linalg::Vec2;

pub type ChainRng = ChaCha8Rng;

/// Independent stream `stream` under master `seed`.
pub fn stream(seed: u64, stream: u64) -> ChainRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// One stream per chain, chain `i` on stream `offset + i`.
pub fn chain_streams(seed: u64, offset: u64, n: usize) -> Vec<ChainRng> {
    (0..n as u64).map(|i| stream(seed, offset + i)).collect()
}

#[inline]
pub fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

#[inline]
pub fn normal2<R: Rng + ?Sized>(rng: &mut R) -> Vec2 {
    [normal(rng), normal(rng)]
}

/// Uniform draw on the open interval (0, 1).
#[inline]
pub fn uniform_open<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            return u;
        }
    }
}
