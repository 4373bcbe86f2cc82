//! Forward and backward kernels for every layer type the network uses.
//!
//! Single-sample kernels take `[C, H, W]` feature maps or flat vectors; the
//! `*_batch` variants take a leading batch axis and are what the model runs.
//! All kernels are pure functions of their arguments.

mod activation;
mod conv;
mod dropout;
mod linear;
mod loss;
mod norm;
mod pool;

pub use activation::{relu, relu_grad};
pub use conv::{conv2d, conv2d_batch, conv2d_grad, conv2d_grad_batch, conv_output_extent, ConvGrads, ConvKernel};
pub use dropout::{dropout_apply, dropout_mask};
pub use linear::{linear, linear_batch, linear_grad, linear_grad_batch, LinearGrads, LinearLayer};
pub use loss::{softmax, softmax_cross_entropy, softmax_cross_entropy_batch};
pub use norm::{batchnorm_forward, batchnorm_grad, BatchNorm, BatchNormCache, BatchNormGrads};
pub use pool::{maxpool2, maxpool2_batch, maxpool2_grad, pool_output_extent, PoolIndices};

use crate::tensor::{Scalar, Tensor};

/// `(input gradient when requested, weight gradient, bias gradient)`.
pub type BatchGrads<T> = (Option<Tensor<T>>, Tensor<T>, Tensor<T>);

/// Dot product with eight independent accumulators so the loop vectorizes.
pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::zero(); 8];
    let chunks = a.len() / 8;
    for (ca, cb) in a.chunks_exact(8).zip(b.chunks_exact(8)) {
        for l in 0..8 {
            acc[l] += ca[l] * cb[l];
        }
    }
    let mut tail = T::zero();
    for i in chunks * 8..a.len() {
        tail += a[i] * b[i];
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// `dst += alpha * src`
#[inline]
pub(crate) fn axpy<T: Scalar>(alpha: T, src: &[T], dst: &mut [T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += alpha * s;
    }
}
