use crate::error::Result;
use crate::tensor::{Scalar, Tensor};

pub fn relu<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|x| if x > T::zero() { x } else { T::zero() })
}

/// Upstream gradient where the input was positive, zero elsewhere (including at 0).
pub fn relu_grad<T: Scalar>(input: &Tensor<T>, upstream: &Tensor<T>) -> Result<Tensor<T>> {
    upstream.ensure_shape("relu_grad upstream", input.shape())?;
    let data = input
        .data()
        .iter()
        .zip(upstream.data())
        .map(|(&x, &u)| if x > T::zero() { u } else { T::zero() })
        .collect();
    Tensor::new(input.shape().to_vec(), data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clamps_negatives() {
        let x = Tensor::from_vec(vec![-1.0f32, 0.0, 2.0]).unwrap();
        assert_eq!(relu(&x).data(), &[0.0, 0.0, 2.0]);
        let g = relu_grad(&x, &Tensor::full(&[3], 5.0)).unwrap();
        assert_eq!(g.data(), &[0.0, 0.0, 5.0]);
    }

    #[test]
    fn all_negative_is_dead() {
        let x = Tensor::from_vec(vec![-3.0f64, -0.5, -1e-9]).unwrap();
        assert!(relu(&x).data().iter().all(|&v| v == 0.0));
        assert!(relu_grad(&x, &Tensor::full(&[3], 1.0))
            .unwrap()
            .data()
            .iter()
            .all(|&v| v == 0.0));
    }
}
