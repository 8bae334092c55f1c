//! Seed derivation.
//!
//! Every random draw in the pipeline comes from a ChaCha stream keyed by a
//! root seed plus a path of integers (speaker id, epoch, step, sample index,
//! ...). Streams for distinct paths are independent, so work can be split
//! across threads without changing any result.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Hashes a root seed and a path into a 64-bit key.
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    let mut h = splitmix64(seed ^ 0x5753_495f_5345_4544);
    for &p in path {
        h = splitmix64(h ^ splitmix64(p.wrapping_add(0x1234_5678)));
    }
    h
}

/// Independent random stream for `(seed, path)`.
pub fn substream(seed: u64, path: &[u64]) -> Rng {
    Rng::seed_from_u64(derive_seed(seed, path))
}

/// Uniform draw in `[lo, hi)`.
pub fn uniform(rng: &mut Rng, lo: f64, hi: f64) -> f64 {
    use rand::Rng as _;
    lo + (hi - lo) * rng.random::<f64>()
}

/// Standard normal draw.
pub fn normal(rng: &mut Rng) -> f64 {
    use rand::Rng as _;
    rng.sample(rand_distr::StandardNormal)
}
