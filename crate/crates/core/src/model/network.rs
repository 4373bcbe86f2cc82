use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use super::arch::{shape_propagate, ArchitectureConfig, LayerSpec, Shape};
use crate::error::{Error, Result};
use crate::ops::{
    batchnorm_forward, batchnorm_grad, conv2d_batch, conv2d_grad_batch, dropout_apply, dropout_mask, linear_batch,
    linear_grad_batch, maxpool2_batch, maxpool2_grad, relu, relu_grad, softmax_cross_entropy_batch, BatchNorm,
    BatchNormCache, ConvKernel, LinearLayer, PoolIndices,
};
use crate::tensor::{Scalar, Tensor};

pub const DEFAULT_BN_EPS: f64 = 1e-5;
pub const DEFAULT_BN_MOMENTUM: f64 = 0.1;

/// Executable counterpart of a [`LayerSpec`].
#[derive(Clone, Debug, PartialEq)]
pub enum Layer<T> {
    Input,
    Conv(ConvKernel<T>),
    MaxPool,
    Flatten,
    /// Fully connected and output layers.
    Dense(LinearLayer<T>),
    Relu,
    BatchNorm(BatchNorm<T>),
    Dropout(f64),
}

/// Weight initialization scheme.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Init {
    /// Normal with variance `2 / fan_in`.
    #[default]
    HeNormal,
    /// Uniform on `±sqrt(6 / (fan_in + fan_out))`, with `fan_out` counting
    /// kernel taps for convolutions.
    GlorotUniform,
}

impl Init {
    pub fn name(self) -> &'static str {
        match self {
            Init::HeNormal => "he_normal",
            Init::GlorotUniform => "glorot_uniform",
        }
    }
}

impl std::fmt::Display for Init {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Init {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "he_normal" => Ok(Init::HeNormal),
            "glorot_uniform" => Ok(Init::GlorotUniform),
            other => Err(Error::Parse(format!(
                "unknown init '{other}' (he_normal, glorot_uniform)"
            ))),
        }
    }
}

/// Whether a forward pass runs with training semantics (batch statistics,
/// random dropout masks drawn from `seed`) or inference semantics.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ForwardMode {
    Eval,
    Train { seed: u64 },
}

#[derive(Clone, Debug)]
enum LayerCache<T> {
    Pass,
    Conv(Tensor<T>),
    Pool(PoolIndices),
    Flatten(Vec<usize>),
    Dense(Tensor<T>),
    Relu(Tensor<T>),
    BatchNorm(BatchNormCache<T>),
    Dropout(Tensor<T>),
}

/// Activations retained by [`Network::forward`] for [`Network::backward`].
#[derive(Clone, Debug, Default)]
pub struct ForwardCache<T> {
    layers: Vec<LayerCache<T>>,
    shapes: Vec<Vec<usize>>,
    logits: Option<Tensor<T>>,
}

impl<T> ForwardCache<T> {
    /// Output shape of every layer for the cached batch, batch axis included.
    pub fn shapes(&self) -> &[Vec<usize>] {
        &self.shapes
    }

    pub fn logits(&self) -> Option<&Tensor<T>> {
        self.logits.as_ref()
    }
}

/// One gradient tensor per parameter tensor, in [`Network::params`] order.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<T> {
    pub tensors: Vec<Tensor<T>>,
}

/// Parameters of a built architecture plus the forward and backward passes.
#[derive(Clone, Debug, PartialEq)]
pub struct Network<T> {
    config: ArchitectureConfig,
    shapes: Vec<Shape>,
    layers: Vec<Layer<T>>,
}

impl<T: Scalar> Network<T> {
    /// All weights and biases zero, batchnorm at identity.
    pub fn zeros(config: &ArchitectureConfig) -> Result<Self> {
        let shapes = shape_propagate(config)?;
        let mut layers = Vec::with_capacity(config.layers.len());
        for (i, spec) in config.layers.iter().enumerate() {
            let input = if i == 0 { shapes[0] } else { shapes[i - 1] };
            layers.push(match spec {
                LayerSpec::Input { .. } => Layer::Input,
                LayerSpec::Conv {
                    filters,
                    kernel,
                    stride,
                    padding,
                } => Layer::Conv(ConvKernel::new(
                    Tensor::zeros(&[*filters, input.channels(), kernel[0], kernel[1]]),
                    Tensor::zeros(&[*filters]),
                    *stride,
                    *padding,
                )?),
                LayerSpec::Maxpool => Layer::MaxPool,
                LayerSpec::Flatten => Layer::Flatten,
                LayerSpec::FullyConnected { neurons } | LayerSpec::Output { neurons } => {
                    Layer::Dense(LinearLayer::zeros(input.numel(), *neurons))
                }
                LayerSpec::Relu => Layer::Relu,
                LayerSpec::Batchnorm => {
                    Layer::BatchNorm(BatchNorm::new(input.channels(), DEFAULT_BN_EPS, DEFAULT_BN_MOMENTUM))
                }
                LayerSpec::Dropout { rate } => Layer::Dropout(*rate),
            });
        }
        Ok(Self {
            config: config.clone(),
            shapes,
            layers,
        })
    }

    /// He-normal weights from a seeded generator, zero biases.
    pub fn new(config: &ArchitectureConfig, seed: u64) -> Result<Self> {
        Self::with_init(config, seed, Init::HeNormal)
    }

    /// Weights drawn by `init` from a seeded generator, zero biases.
    pub fn with_init(config: &ArchitectureConfig, seed: u64, init: Init) -> Result<Self> {
        let mut net = Self::zeros(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in &mut net.layers {
            let (w, fan_in, fan_out) = match layer {
                Layer::Conv(k) => {
                    let (kh, kw) = k.kernel_size();
                    let (fan_in, fan_out) = (k.in_channels() * kh * kw, k.out_channels() * kh * kw);
                    (&mut k.weights, fan_in, fan_out)
                }
                Layer::Dense(l) => {
                    let (fan_in, fan_out) = (l.inputs(), l.outputs());
                    (&mut l.weights, fan_in, fan_out)
                }
                _ => continue,
            };
            match init {
                Init::HeNormal => {
                    let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("finite std");
                    for v in w.data_mut() {
                        *v = T::from_f64_lossy(normal.sample(&mut rng));
                    }
                }
                Init::GlorotUniform => {
                    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                    let uniform = Uniform::new_inclusive(-limit, limit).expect("finite limit");
                    for v in w.data_mut() {
                        *v = T::from_f64_lossy(uniform.sample(&mut rng));
                    }
                }
            }
        }
        Ok(net)
    }

    pub fn config(&self) -> &ArchitectureConfig {
        &self.config
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    /// Per-sample output shapes from shape propagation.
    pub fn shapes(&self) -> &[Shape] {
        &self.shapes
    }

    pub fn input_dims(&self) -> Vec<usize> {
        self.shapes[0].dims()
    }

    /// Learnable tensors in declaration order: weights then bias for conv and
    /// dense layers, gamma then beta for batchnorm.
    pub fn params(&self) -> Vec<&Tensor<T>> {
        let mut out = Vec::new();
        for layer in &self.layers {
            match layer {
                Layer::Conv(k) => out.extend([&k.weights, &k.bias]),
                Layer::Dense(l) => out.extend([&l.weights, &l.bias]),
                Layer::BatchNorm(b) => out.extend([&b.gamma, &b.beta]),
                _ => {}
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            match layer {
                Layer::Conv(k) => out.extend([&mut k.weights, &mut k.bias]),
                Layer::Dense(l) => out.extend([&mut l.weights, &mut l.bias]),
                Layer::BatchNorm(b) => out.extend([&mut b.gamma, &mut b.beta]),
                _ => {}
            }
        }
        out
    }

    /// Human-readable names matching [`Network::params`].
    pub fn param_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            let kind = self.config.layers[i].kind_name();
            let names: &[&str] = match layer {
                Layer::Conv(_) | Layer::Dense(_) => &["weight", "bias"],
                Layer::BatchNorm(_) => &["gamma", "beta"],
                _ => &[],
            };
            out.extend(names.iter().map(|n| format!("{i}.{kind}.{n}")));
        }
        out
    }

    /// Every tensor a checkpoint must carry: the parameters plus batchnorm
    /// running statistics, layer by layer.
    pub fn state(&self) -> Vec<&Tensor<T>> {
        let mut out = Vec::new();
        for layer in &self.layers {
            match layer {
                Layer::Conv(k) => out.extend([&k.weights, &k.bias]),
                Layer::Dense(l) => out.extend([&l.weights, &l.bias]),
                Layer::BatchNorm(b) => out.extend([&b.gamma, &b.beta, &b.running_mean, &b.running_var]),
                _ => {}
            }
        }
        out
    }

    pub fn state_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            match layer {
                Layer::Conv(k) => out.extend([&mut k.weights, &mut k.bias]),
                Layer::Dense(l) => out.extend([&mut l.weights, &mut l.bias]),
                Layer::BatchNorm(b) => out.extend([&mut b.gamma, &mut b.beta, &mut b.running_mean, &mut b.running_var]),
                _ => {}
            }
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.params().iter().map(|t| t.len()).sum()
    }

    /// Same network in another precision.
    pub fn cast<U: Scalar>(&self) -> Network<U> {
        let layers = self
            .layers
            .iter()
            .map(|l| match l {
                Layer::Input => Layer::Input,
                Layer::Conv(k) => Layer::Conv(ConvKernel {
                    weights: k.weights.cast(),
                    bias: k.bias.cast(),
                    stride: k.stride,
                    padding: k.padding,
                }),
                Layer::MaxPool => Layer::MaxPool,
                Layer::Flatten => Layer::Flatten,
                Layer::Dense(d) => Layer::Dense(LinearLayer {
                    weights: d.weights.cast(),
                    bias: d.bias.cast(),
                }),
                Layer::Relu => Layer::Relu,
                Layer::BatchNorm(b) => Layer::BatchNorm(BatchNorm {
                    gamma: b.gamma.cast(),
                    beta: b.beta.cast(),
                    running_mean: b.running_mean.cast(),
                    running_var: b.running_var.cast(),
                    eps: b.eps,
                    momentum: b.momentum,
                }),
                Layer::Dropout(r) => Layer::Dropout(*r),
            })
            .collect();
        Network {
            config: self.config.clone(),
            shapes: self.shapes.clone(),
            layers,
        }
    }

    fn batch_input(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let dims = self.input_dims();
        let s = input.shape();
        let batched = if s.len() == dims.len() {
            input.clone().reshape(&[&[1], s].concat())?
        } else {
            input.clone()
        };
        if batched.shape()[1..] != dims[..] {
            return Err(Error::ShapeMismatch {
                op: "network input",
                expected: [&[batched.shape()[0]], &dims[..]].concat(),
                actual: s.to_vec(),
            });
        }
        Ok(batched)
    }

    fn run(&self, input: &Tensor<T>, mode: ForwardMode, keep: bool) -> Result<(Tensor<T>, ForwardCache<T>)> {
        let mut x = self.batch_input(input)?;
        let b = x.shape()[0];
        let training = matches!(mode, ForwardMode::Train { .. });
        let mut cache = ForwardCache {
            layers: Vec::with_capacity(self.layers.len()),
            shapes: Vec::with_capacity(self.layers.len()),
            logits: None,
        };
        for (i, layer) in self.layers.iter().enumerate() {
            let (y, entry) = match layer {
                Layer::Input => (x, LayerCache::Pass),
                Layer::Conv(k) => (conv2d_batch(&x, k)?, LayerCache::Conv(x)),
                Layer::MaxPool => {
                    let (y, idx) = maxpool2_batch(&x)?;
                    (y, LayerCache::Pool(idx))
                }
                Layer::Flatten => {
                    let shape = x.shape().to_vec();
                    let n = x.len() / b;
                    (x.reshape(&[b, n])?, LayerCache::Flatten(shape))
                }
                Layer::Dense(l) => (linear_batch(&x, l)?, LayerCache::Dense(x)),
                Layer::Relu => (relu(&x), LayerCache::Relu(x)),
                Layer::BatchNorm(bn) => {
                    let (y, c) = batchnorm_forward(&x, bn, training)?;
                    (y, LayerCache::BatchNorm(c))
                }
                Layer::Dropout(rate) => match mode {
                    ForwardMode::Train { seed } if *rate > 0.0 => {
                        let mut rng = ChaCha8Rng::seed_from_u64(seed);
                        rng.set_stream(i as u64);
                        let mask = dropout_mask(x.shape(), *rate, &mut rng);
                        (dropout_apply(&x, &mask), LayerCache::Dropout(mask))
                    }
                    _ => (x, LayerCache::Pass),
                },
            };
            if keep {
                cache.shapes.push(y.shape().to_vec());
                cache.layers.push(entry);
            }
            x = y;
        }
        if !x.is_finite() {
            return Err(Error::NonFinite("network output"));
        }
        if keep {
            cache.logits = Some(x.clone());
        }
        Ok((x, cache))
    }

    /// Logits `[B, 2]` for a `[B, C, H, W]` (or single `[C, H, W]`) input,
    /// plus the activations needed by [`Network::backward`].
    pub fn forward(&self, input: &Tensor<T>, mode: ForwardMode) -> Result<(Tensor<T>, ForwardCache<T>)> {
        self.run(input, mode, true)
    }

    /// Inference-mode logits without retaining activations.
    pub fn predict(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.run(input, ForwardMode::Eval, false)?.0)
    }

    /// Mean softmax cross-entropy over the cached batch and the gradient of
    /// every parameter tensor.
    pub fn backward(&self, cache: &ForwardCache<T>, labels: &[usize]) -> Result<(T, Gradients<T>)> {
        let logits = cache
            .logits
            .as_ref()
            .ok_or_else(|| Error::MissingCache("no logits recorded".into()))?;
        let (loss, upstream) = softmax_cross_entropy_batch(logits, labels)?;
        Ok((loss, self.backward_from(cache, upstream)?))
    }

    /// Backpropagates an arbitrary upstream gradient of the logits.
    pub fn backward_from(&self, cache: &ForwardCache<T>, upstream: Tensor<T>) -> Result<Gradients<T>> {
        if cache.layers.len() != self.layers.len() {
            return Err(Error::MissingCache(format!(
                "cache holds {} layers, network has {}",
                cache.layers.len(),
                self.layers.len()
            )));
        }
        if let Some(last) = cache.shapes.last() {
            upstream.ensure_shape("logit gradient", last)?;
        }
        let first_param = self
            .layers
            .iter()
            .position(|l| matches!(l, Layer::Conv(_) | Layer::Dense(_) | Layer::BatchNorm(_)))
            .unwrap_or(self.layers.len());

        let mut up = upstream;
        let mut grads_rev: Vec<Tensor<T>> = Vec::new();
        for (i, (layer, entry)) in self.layers.iter().zip(&cache.layers).enumerate().rev() {
            if i < first_param {
                break;
            }
            let need_input = i > first_param;
            up = match (layer, entry) {
                (Layer::Input, _) => up,
                (Layer::Conv(k), LayerCache::Conv(x)) => {
                    let (gin, gw, gb) = conv2d_grad_batch(x, k, &up, need_input)?;
                    grads_rev.extend([gb, gw]);
                    match gin {
                        Some(g) => g,
                        None => break,
                    }
                }
                (Layer::MaxPool, LayerCache::Pool(idx)) => maxpool2_grad(idx, &up)?,
                (Layer::Flatten, LayerCache::Flatten(shape)) => up.reshape(shape)?,
                (Layer::Dense(l), LayerCache::Dense(x)) => {
                    let (gin, gw, gb) = linear_grad_batch(x, l, &up, need_input)?;
                    grads_rev.extend([gb, gw]);
                    match gin {
                        Some(g) => g,
                        None => break,
                    }
                }
                (Layer::Relu, LayerCache::Relu(x)) => relu_grad(x, &up)?,
                (Layer::BatchNorm(bn), LayerCache::BatchNorm(c)) => {
                    let g = batchnorm_grad(c, bn, &up)?;
                    grads_rev.extend([g.beta, g.gamma]);
                    g.input
                }
                (Layer::Dropout(_), LayerCache::Dropout(mask)) => dropout_apply(&up, mask),
                (Layer::Dropout(_), LayerCache::Pass) => up,
                _ => {
                    return Err(Error::MissingCache(format!(
                        "layer {i} ({}) has no matching cached activation",
                        self.config.layers[i].kind_name()
                    )))
                }
            };
        }
        grads_rev.reverse();
        Ok(Gradients { tensors: grads_rev })
    }

    /// Folds the batch statistics recorded by a training-mode forward pass
    /// into every batchnorm layer's running averages.
    pub fn update_running_stats(&mut self, cache: &ForwardCache<T>) {
        for (i, (layer, entry)) in self.layers.iter_mut().zip(&cache.layers).enumerate() {
            if let (Layer::BatchNorm(bn), LayerCache::BatchNorm(c)) = (layer, entry) {
                let shape = &cache.shapes[i];
                let count = shape[0] * shape[2..].iter().product::<usize>();
                bn.update_running(c, count);
            }
        }
    }
}

/// Index of the largest logit; ties go to the lower class index.
pub fn argmax(logits: &[impl PartialOrd + Copy]) -> usize {
    let mut best = 0;
    for (i, v) in logits.iter().enumerate() {
        if *v > logits[best] {
            best = i;
        }
    }
    best
}
