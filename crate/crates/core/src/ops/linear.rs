use rayon::prelude::*;

use super::{axpy, dot, BatchGrads};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Fully connected layer `y = W x + b` with `W` of shape `[out, in]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearLayer<T> {
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinearGrads<T> {
    pub input: Tensor<T>,
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> LinearLayer<T> {
    pub fn new(weights: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        if weights.shape().len() != 2 {
            return Err(Error::invalid(format!(
                "linear weights must be [out, in], got {:?}",
                weights.shape()
            )));
        }
        bias.ensure_shape("linear bias", &[weights.shape()[0]])?;
        Ok(Self { weights, bias })
    }

    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weights: Tensor::zeros(&[outputs, inputs]),
            bias: Tensor::zeros(&[outputs]),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn outputs(&self) -> usize {
        self.weights.shape()[0]
    }

    /// `(inputs + 1) * outputs`
    pub fn parameter_count(&self) -> usize {
        (self.inputs() + 1) * self.outputs()
    }

    fn check_len(&self, n: usize) -> Result<()> {
        if n != self.inputs() {
            return Err(Error::invalid(format!(
                "linear input length {n} does not match layer input length {}",
                self.inputs()
            )));
        }
        Ok(())
    }

    fn apply(&self, x: &[T], out: &mut [T]) {
        let ni = self.inputs();
        for (o, y) in out.iter_mut().enumerate() {
            *y = dot(&self.weights.data()[o * ni..(o + 1) * ni], x) + self.bias.data()[o];
        }
    }
}

pub fn linear<T: Scalar>(input: &[T], layer: &LinearLayer<T>) -> Result<Vec<T>> {
    layer.check_len(input.len())?;
    let mut out = vec![T::zero(); layer.outputs()];
    layer.apply(input, &mut out);
    Ok(out)
}

/// [`linear`] over a `[B, in]` batch.
pub fn linear_batch<T: Scalar>(input: &Tensor<T>, layer: &LinearLayer<T>) -> Result<Tensor<T>> {
    let s = input.shape();
    if s.len() != 2 {
        return Err(Error::invalid(format!("linear_batch expects [B, in], got {s:?}")));
    }
    layer.check_len(s[1])?;
    let no = layer.outputs();
    let mut out = Tensor::zeros(&[s[0], no]);
    out.data_mut()
        .par_chunks_mut(no)
        .zip(input.data().par_chunks(s[1]))
        .for_each(|(y, x)| layer.apply(x, y));
    Ok(out)
}

pub fn linear_grad<T: Scalar>(input: &[T], layer: &LinearLayer<T>, upstream: &[T]) -> Result<LinearGrads<T>> {
    layer.check_len(input.len())?;
    let x = Tensor::new(vec![1, input.len()], input.to_vec())?;
    let up = Tensor::new(vec![1, upstream.len()], upstream.to_vec())?;
    let (gin, weights, bias) = linear_grad_batch(&x, layer, &up, true)?;
    Ok(LinearGrads {
        input: gin.expect("requested").reshape(&[input.len()])?,
        weights,
        bias,
    })
}

/// Batched affine gradients; weight rows are independent so they are computed
/// in parallel, each summing over the batch in sample order.
pub fn linear_grad_batch<T: Scalar>(
    input: &Tensor<T>,
    layer: &LinearLayer<T>,
    upstream: &Tensor<T>,
    need_input: bool,
) -> Result<BatchGrads<T>> {
    let s = input.shape();
    if s.len() != 2 {
        return Err(Error::invalid(format!("linear_grad_batch expects [B, in], got {s:?}")));
    }
    layer.check_len(s[1])?;
    let (b, ni, no) = (s[0], s[1], layer.outputs());
    upstream.ensure_shape("linear_grad upstream", &[b, no])?;

    let mut gw = Tensor::zeros(&[no, ni]);
    gw.data_mut().par_chunks_mut(ni).enumerate().for_each(|(o, row)| {
        for n in 0..b {
            axpy(upstream.data()[n * no + o], input.outer(n), row);
        }
    });
    let mut gb = Tensor::zeros(&[no]);
    for n in 0..b {
        for (g, &u) in gb.data_mut().iter_mut().zip(upstream.outer(n)) {
            *g += u;
        }
    }
    let gin = if need_input {
        let mut gin = Tensor::zeros(&[b, ni]);
        gin.data_mut().par_chunks_mut(ni).enumerate().for_each(|(n, row)| {
            for (o, &u) in upstream.outer(n).iter().enumerate() {
                axpy(u, &layer.weights.data()[o * ni..(o + 1) * ni], row);
            }
        });
        Some(gin)
    } else {
        None
    };
    Ok((gin, gw, gb))
}
