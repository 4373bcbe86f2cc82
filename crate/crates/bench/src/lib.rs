//! Shared fixtures for the benchmarks.

use pvfaultnet::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Uniform values in `[-0.5, 0.5)`, reproducible from `seed`.
pub fn random_tensor(shape: &[usize], seed: u64) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-0.5f32..0.5)).collect();
    Tensor::new(shape.to_vec(), data).expect("length matches shape")
}
