//! Shared oracles for integration tests.
#![allow(dead_code)]

pub mod gradcheck;
pub mod naive;

use pvfaultnet::model::{ArchitectureConfig, LayerSpec};
use pvfaultnet::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(shape: &[usize], rng: &mut impl Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Central finite differences of a scalar function of one tensor.
pub fn numeric_grad(x: &Tensor<f64>, h: f64, mut f: impl FnMut(&Tensor<f64>) -> f64) -> Tensor<f64> {
    let mut probe = x.clone();
    let mut grad = Tensor::zeros(x.shape());
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = f(&probe);
        probe.data_mut()[i] = orig - h;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        grad.data_mut()[i] = (up - down) / (2.0 * h);
    }
    grad
}

/// `||a - b|| / max(||a|| + ||b||, 1e-12)` over all elements.
pub fn rel_error(a: &[f64], b: &[f64]) -> f64 {
    rel_error_floor(a, b, 1e-12)
}

/// [`rel_error`] with a caller-chosen denominator floor, so a gradient that
/// vanishes identically (a conv bias feeding batchnorm) is judged against the
/// scale of its neighbours instead of its own rounding noise.
pub fn rel_error_floor(a: &[f64], b: &[f64], floor: f64) -> f64 {
    assert_eq!(a.len(), b.len());
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let norm = a.iter().map(|x| x * x).sum::<f64>().sqrt() + b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / norm.max(floor)
}

/// `sum(weights * y)`: a scalar probe whose gradient with respect to `y` is
/// `weights`.
pub fn dot(y: &Tensor<f64>, weights: &Tensor<f64>) -> f64 {
    y.data().iter().zip(weights.data()).map(|(a, b)| a * b).sum()
}

/// Small network on 3x8x8 inputs: one conv+pool block and two dense layers.
pub fn toy_config() -> ArchitectureConfig {
    ArchitectureConfig {
        name: "toy".into(),
        layers: vec![
            LayerSpec::Input {
                channels: 3,
                height: 8,
                width: 8,
            },
            LayerSpec::conv3x3(4),
            LayerSpec::Maxpool,
            LayerSpec::Flatten,
            LayerSpec::FullyConnected { neurons: 6 },
            LayerSpec::Relu,
            LayerSpec::Output { neurons: 2 },
        ],
    }
}
