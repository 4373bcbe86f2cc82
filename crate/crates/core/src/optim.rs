//! SGD with momentum and L2 weight decay.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Velocity buffers and hyper-parameters for SGD with momentum.
///
/// The update for each parameter `w` with gradient `g` is
///
/// ```text
/// v <- momentum * v - learning_rate * (g + weight_decay * w)
/// w <- w + v
/// ```
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState<T> {
    pub velocity: Vec<Tensor<T>>,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl<T: Scalar> OptimizerState<T> {
    /// Zero velocity shaped like `params`.
    pub fn new<'a>(
        params: impl IntoIterator<Item = &'a Tensor<T>>,
        learning_rate: f64,
        momentum: f64,
        weight_decay: f64,
    ) -> Result<Self> {
        if !(learning_rate > 0.0 && learning_rate.is_finite()) {
            return Err(Error::invalid(format!(
                "learning rate must be positive, got {learning_rate}"
            )));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::invalid(format!("momentum must lie in [0, 1), got {momentum}")));
        }
        if !(weight_decay >= 0.0 && weight_decay.is_finite()) {
            return Err(Error::invalid(format!(
                "weight decay must be non-negative, got {weight_decay}"
            )));
        }
        Ok(Self {
            velocity: params.into_iter().map(|p| Tensor::zeros(p.shape())).collect(),
            learning_rate,
            momentum,
            weight_decay,
        })
    }
}

/// Applies one update to every parameter tensor, in order.
pub fn sgd_momentum_step<T: Scalar>(
    params: &mut [&mut Tensor<T>],
    grads: &[Tensor<T>],
    state: &mut OptimizerState<T>,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.velocity.len() {
        return Err(Error::invalid(format!(
            "optimizer got {} parameters, {} gradients and {} velocity buffers",
            params.len(),
            grads.len(),
            state.velocity.len()
        )));
    }
    for ((p, g), v) in params.iter().zip(grads).zip(&state.velocity) {
        g.ensure_shape("sgd gradient", p.shape())?;
        v.ensure_shape("sgd velocity", p.shape())?;
    }
    let lr = T::from_f64_lossy(state.learning_rate);
    let mu = T::from_f64_lossy(state.momentum);
    let wd = T::from_f64_lossy(state.weight_decay);
    for ((p, g), v) in params.iter_mut().zip(grads).zip(state.velocity.iter_mut()) {
        for ((w, &gi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
            *vi = mu * *vi - lr * (gi + wd * *w);
            *w += *vi;
        }
    }
    Ok(())
}
