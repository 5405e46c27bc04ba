//! Seeded, counter-based random streams.
//!
//! Every consumer derives its generator from a `(seed, stream)` pair so that
//! trials and pulses can be evaluated in any order, or in parallel, and still
//! reproduce bit for bit.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Generator for the substream `stream` of `seed`.
pub fn substream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Combines two indices into one stream id.
pub fn stream_id(major: u64, minor: u64) -> u64 {
    // splitmix64 finalizer over a packed key keeps nearby ids decorrelated
    let mut z = major.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ minor;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Circularly symmetric complex Gaussian draw with `E|z|^2 = variance`.
pub fn complex_gaussian<R: rand::Rng + ?Sized>(rng: &mut R, variance: f64) -> Complex64 {
    let s = (variance / 2.0).sqrt();
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(s * re, s * im)
}
