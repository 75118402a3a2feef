//! Reproducible random streams.
//!
//! Every random draw in the crate comes from ChaCha8 seeded with a 64-bit
//! seed and a stream id. ChaCha is counter based, so a `(seed, stream)` pair
//! names one fixed sequence on every platform, independent of thread
//! scheduling. Replication `t` of an experiment with base seed `s` uses seed
//! `s ^ t`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Purpose-specific stream ids. Two purposes never share a stream, so adding
/// draws to one of them cannot shift the others.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Signal = 1,
    Noise = 2,
    Mask = 3,
    Outcome = 4,
    Folds = 5,
    Privacy = 6,
}

pub fn stream(seed: u64, which: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(which as u64);
    rng
}

pub fn replication_seed(base_seed: u64, rep: u64) -> u64 {
    base_seed ^ rep
}

/// Laplace(0, scale) via inverse CDF.
pub fn laplace<R: rand::Rng + ?Sized>(rng: &mut R, scale: f64) -> f64 {
    if scale == 0.0 {
        return 0.0;
    }
    // u in (-1/2, 1/2); the open lower end keeps ln finite.
    let mut u: f64 = rng.random::<f64>() - 0.5;
    while u == -0.5 {
        u = rng.random::<f64>() - 0.5;
    }
    -scale * u.signum() * (1.0 - 2.0 * u.abs()).ln()
}
