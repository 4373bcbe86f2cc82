use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Per-channel batch normalization over axis 1 of a `[B, C, ...]` tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm<T> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    pub eps: f64,
    pub momentum: f64,
}

/// What the backward pass needs from a batchnorm forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormCache<T> {
    pub xhat: Tensor<T>,
    pub inv_std: Vec<T>,
    pub batch_mean: Vec<T>,
    pub batch_var: Vec<T>,
    pub training: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormGrads<T> {
    pub input: Tensor<T>,
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
}

impl<T: Scalar> BatchNorm<T> {
    pub fn new(channels: usize, eps: f64, momentum: f64) -> Self {
        Self {
            gamma: Tensor::full(&[channels], T::one()),
            beta: Tensor::zeros(&[channels]),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::full(&[channels], T::one()),
            eps,
            momentum,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    /// Folds the batch statistics of a training-mode forward pass into the
    /// running averages used at inference. Variance is stored unbiased.
    pub fn update_running(&mut self, cache: &BatchNormCache<T>, count: usize) {
        if !cache.training {
            return;
        }
        let m = T::from_f64_lossy(self.momentum);
        let keep = T::one() - m;
        let correction = if count > 1 {
            T::from_f64_lossy(count as f64 / (count - 1) as f64)
        } else {
            T::one()
        };
        for c in 0..self.channels() {
            let rm = &mut self.running_mean.data_mut()[c];
            *rm = keep * *rm + m * cache.batch_mean[c];
            let rv = &mut self.running_var.data_mut()[c];
            *rv = keep * *rv + m * cache.batch_var[c] * correction;
        }
    }
}

fn layout(shape: &[usize], channels: usize) -> Result<(usize, usize)> {
    if shape.len() < 2 || shape[1] != channels {
        return Err(Error::invalid(format!(
            "batchnorm over {channels} channels cannot take input shape {shape:?}"
        )));
    }
    Ok((shape[0], shape[2..].iter().product()))
}

/// Normalizes with batch statistics when `training`, running statistics
/// otherwise, then applies the per-channel affine `gamma * xhat + beta`.
pub fn batchnorm_forward<T: Scalar>(
    input: &Tensor<T>,
    bn: &BatchNorm<T>,
    training: bool,
) -> Result<(Tensor<T>, BatchNormCache<T>)> {
    let c_n = bn.channels();
    let (b, plane) = layout(input.shape(), c_n)?;
    let x = input.data();
    let count = T::from_usize(b * plane).expect("count fits the scalar type");
    let eps = T::from_f64_lossy(bn.eps);

    let (mean, var) = if training {
        let mut mean = vec![T::zero(); c_n];
        let mut var = vec![T::zero(); c_n];
        for c in 0..c_n {
            let mut s = T::zero();
            for n in 0..b {
                let off = (n * c_n + c) * plane;
                s += x[off..off + plane].iter().copied().sum::<T>();
            }
            let mu = s / count;
            let mut v = T::zero();
            for n in 0..b {
                let off = (n * c_n + c) * plane;
                v += x[off..off + plane].iter().map(|&e| (e - mu) * (e - mu)).sum::<T>();
            }
            mean[c] = mu;
            var[c] = v / count;
        }
        (mean, var)
    } else {
        (bn.running_mean.data().to_vec(), bn.running_var.data().to_vec())
    };

    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let mut xhat = Tensor::zeros(input.shape());
    let mut out = Tensor::zeros(input.shape());
    for n in 0..b {
        for c in 0..c_n {
            let off = (n * c_n + c) * plane;
            let (g, be) = (bn.gamma.data()[c], bn.beta.data()[c]);
            let xh = &mut xhat.data_mut()[off..off + plane];
            let ys = &mut out.data_mut()[off..off + plane];
            for ((h, y), &xi) in xh.iter_mut().zip(ys.iter_mut()).zip(&x[off..off + plane]) {
                *h = (xi - mean[c]) * inv_std[c];
                *y = g * *h + be;
            }
        }
    }
    Ok((
        out,
        BatchNormCache {
            xhat,
            inv_std,
            batch_mean: mean,
            batch_var: var,
            training,
        },
    ))
}

pub fn batchnorm_grad<T: Scalar>(
    cache: &BatchNormCache<T>,
    bn: &BatchNorm<T>,
    upstream: &Tensor<T>,
) -> Result<BatchNormGrads<T>> {
    upstream.ensure_shape("batchnorm_grad upstream", cache.xhat.shape())?;
    let c_n = bn.channels();
    let (b, plane) = layout(upstream.shape(), c_n)?;
    let dy = upstream.data();
    let xhat = cache.xhat.data();
    let count = T::from_usize(b * plane).expect("count fits the scalar type");

    let mut gamma = vec![T::zero(); c_n];
    let mut beta = vec![T::zero(); c_n];
    for n in 0..b {
        for c in 0..c_n {
            let off = (n * c_n + c) * plane;
            for i in off..off + plane {
                beta[c] += dy[i];
                gamma[c] += dy[i] * xhat[i];
            }
        }
    }

    let mut gin = Tensor::zeros(upstream.shape());
    for n in 0..b {
        for c in 0..c_n {
            let off = (n * c_n + c) * plane;
            let scale = bn.gamma.data()[c] * cache.inv_std[c];
            for i in off..off + plane {
                gin.data_mut()[i] = if cache.training {
                    scale * (dy[i] - beta[c] / count - xhat[i] * gamma[c] / count)
                } else {
                    scale * dy[i]
                };
            }
        }
    }
    Ok(BatchNormGrads {
        input: gin,
        gamma: Tensor::from_vec(gamma)?,
        beta: Tensor::from_vec(beta)?,
    })
}
