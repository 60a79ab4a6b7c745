//! Counter-based random streams.
//!
//! Every random quantity in a simulation is drawn from a ChaCha stream keyed by
//! `(seed, purpose, index)`. Work items can therefore be generated in any order,
//! on any number of workers, and still reproduce bit-identical draws.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Distinguishes independent consumers of the same seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Downlink = 1,
    Uplink = 2,
    Quantizer = 3,
    Symbols = 4,
    Noise = 5,
    Model = 6,
}

/// Returns the generator for work item `index` of `purpose` under `seed`.
pub fn substream(seed: u64, purpose: Purpose, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // 8 bits of purpose, 56 bits of index.
    rng.set_stream(((purpose as u64) << 56) | (index & ((1 << 56) - 1)));
    rng
}

/// Draws a proper complex Gaussian sample with the given variance.
#[inline]
pub fn complex_normal<R: Rng + ?Sized>(rng: &mut R, variance: f64) -> Complex64 {
    let scale = (0.5 * variance).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(scale * re, scale * im)
}

/// Uniform draw on the centered square of half-width `half`, open at the top.
#[inline]
pub fn complex_uniform<R: Rng + ?Sized>(rng: &mut R, half: f64) -> Complex64 {
    Complex64::new(
        rng.random_range(-half..half),
        rng.random_range(-half..half),
    )
}
