use rand::Rng;

use crate::tensor::{Scalar, Tensor};

/// Inverted-dropout mask: each entry is `0` with probability `rate`, otherwise
/// `1 / (1 - rate)`, so the expected activation is unchanged.
pub fn dropout_mask<T: Scalar, R: Rng + ?Sized>(shape: &[usize], rate: f64, rng: &mut R) -> Tensor<T> {
    if rate == 0.0 {
        return Tensor::full(shape, T::one());
    }
    let keep = T::one() / T::from_f64_lossy(1.0 - rate);
    let mut mask = Tensor::zeros(shape);
    for m in mask.data_mut() {
        if rng.random::<f64>() >= rate {
            *m = keep;
        }
    }
    mask
}

pub fn dropout_apply<T: Scalar>(input: &Tensor<T>, mask: &Tensor<T>) -> Tensor<T> {
    let data = input.data().iter().zip(mask.data()).map(|(&x, &m)| x * m).collect();
    Tensor::new(input.shape().to_vec(), data).expect("mask shape mirrors input")
}
