//! Deterministic randomness.
//!
//! One run seed fans out to fixed per-purpose streams, so adding a consumer
//! never perturbs the draws another consumer sees.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::scalar::Scalar;

/// Purpose tag selecting an independent stream from the run seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    SvdRange = 1,
    ModelInit = 2,
    NegativeSampling = 3,
    EpochShuffle = 4,
    SynthModel = 5,
    SynthUsers = 6,
    Misc = 7,
}

pub fn stream(seed: u64, purpose: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(purpose as u64);
    rng
}

/// Standard normal draw via the Marsaglia polar method.
pub fn standard_normal<T: Scalar>(rng: &mut impl Rng) -> T {
    loop {
        let u: f64 = rng.gen_range(-1.0..1.0);
        let v: f64 = rng.gen_range(-1.0..1.0);
        let s = u * u + v * v;
        if s > 0.0 && s < 1.0 {
            return T::from_f64_lossy(u * (-2.0 * s.ln() / s).sqrt());
        }
    }
}
