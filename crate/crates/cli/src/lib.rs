//! Support library for the `rfscope` binary: file formats and input
//! generation, kept here so integration tests can reuse the readers.

pub mod io;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rfscope::erf::Tensor4;

fn unit_f64(rng: &mut ChaCha8Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / 9_007_199_254_740_992.0)
}

/// Deterministic batch of input spectrograms, uniform in `[0, 1)`.
/// Used by `erf --seed`; the stream is independent of the weight stream.
pub fn seeded_inputs(seed: u64, dims: [usize; 4]) -> Tensor4 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n: usize = dims.iter().product();
    let data: Vec<f64> = (0..n).map(|_| unit_f64(&mut rng)).collect();
    Tensor4::from_vec(dims, data).expect("generated data matches dims")
}
