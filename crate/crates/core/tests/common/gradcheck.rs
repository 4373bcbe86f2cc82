//! Per-layer and whole-network gradient checks. Each check appends
//! `(name, relative error)` pairs instead of asserting, so the gradient tests
//! and the acceptance summary share one implementation.

use pvfaultnet::model::{with_batchnorm, with_dropout, ArchitectureConfig, ForwardMode, Network};
use pvfaultnet::ops::*;
use pvfaultnet::Tensor;

use super::{dot, numeric_grad, random_tensor, rel_error, rel_error_floor, rng, toy_config};

const H: f64 = 1e-6;

fn err(name: &str, analytic: &Tensor<f64>, numeric: &Tensor<f64>) -> (String, f64) {
    (name.to_string(), rel_error(analytic.data(), numeric.data()))
}

/// Appends `(name, relative error)` measurements.
pub type Check = fn(&mut Vec<(String, f64)>);

/// Single-layer checks, in double precision.
pub const LAYER_CHECKS: [Check; 9] = [
    conv2d_gradients,
    conv2d_batch_gradients_sum_samples,
    linear_gradients,
    relu_gradient_away_from_the_kink,
    maxpool_gradient,
    softmax_cross_entropy_gradient,
    batchnorm_training_gradients,
    batchnorm_inference_gradient,
    dropout_gradient_is_the_mask,
];

/// Whole toy network checks: single-precision analytic gradients.
pub const NETWORK_CHECKS: [Check; 2] = [
    whole_network_gradients,
    whole_network_gradients_with_batchnorm_and_dropout,
];

pub fn conv2d_gradients(errs: &mut Vec<(String, f64)>) {
    let mut r = rng(1);
    for (c, k, h, w, kh, kw, stride, pad) in [
        (2, 3, 6, 5, 3, 3, 1, 0),
        (1, 2, 8, 8, 3, 3, 2, 1),
        (3, 2, 5, 7, 1, 3, 1, 1),
        (2, 2, 7, 7, 5, 5, 1, 2),
    ] {
        let x = random_tensor(&[c, h, w], &mut r);
        let kernel = ConvKernel::new(
            random_tensor(&[k, c, kh, kw], &mut r),
            random_tensor(&[k], &mut r),
            stride,
            pad,
        )
        .unwrap();
        let y = conv2d(&x, &kernel).unwrap();
        let up = random_tensor(y.shape(), &mut r);
        let g = conv2d_grad(&x, &kernel, &up).unwrap();

        errs.push(err(
            "conv input",
            &g.input,
            &numeric_grad(&x, H, |x| dot(&conv2d(x, &kernel).unwrap(), &up)),
        ));
        let gw = numeric_grad(&kernel.weights, H, |w| {
            let kk = ConvKernel::new(w.clone(), kernel.bias.clone(), stride, pad).unwrap();
            dot(&conv2d(&x, &kk).unwrap(), &up)
        });
        errs.push(err("conv weights", &g.weights, &gw));
        let gb = numeric_grad(&kernel.bias, H, |b| {
            let kk = ConvKernel::new(kernel.weights.clone(), b.clone(), stride, pad).unwrap();
            dot(&conv2d(&x, &kk).unwrap(), &up)
        });
        errs.push(err("conv bias", &g.bias, &gb));
    }
}

pub fn conv2d_batch_gradients_sum_samples(errs: &mut Vec<(String, f64)>) {
    let mut r = rng(2);
    let x = random_tensor(&[3, 2, 6, 6], &mut r);
    let kernel = ConvKernel::new(random_tensor(&[3, 2, 3, 3], &mut r), random_tensor(&[3], &mut r), 1, 0).unwrap();
    let y = conv2d_batch(&x, &kernel).unwrap();
    let up = random_tensor(y.shape(), &mut r);
    let (gin, gw, _) = conv2d_grad_batch(&x, &kernel, &up, true).unwrap();
    errs.push(err(
        "batched conv input",
        &gin.unwrap(),
        &numeric_grad(&x, H, |x| dot(&conv2d_batch(x, &kernel).unwrap(), &up)),
    ));
    let nw = numeric_grad(&kernel.weights, H, |w| {
        let kk = ConvKernel::new(w.clone(), kernel.bias.clone(), 1, 0).unwrap();
        dot(&conv2d_batch(&x, &kk).unwrap(), &up)
    });
    errs.push(err("batched conv weights", &gw, &nw));
}

pub fn linear_gradients(errs: &mut Vec<(String, f64)>) {
    let mut r = rng(3);
    let x = random_tensor(&[4, 7], &mut r);
    let layer = LinearLayer::new(random_tensor(&[5, 7], &mut r), random_tensor(&[5], &mut r)).unwrap();
    let up = random_tensor(&[4, 5], &mut r);
    let (gin, gw, gb) = linear_grad_batch(&x, &layer, &up, true).unwrap();
    errs.push(err(
        "linear input",
        &gin.unwrap(),
        &numeric_grad(&x, H, |x| dot(&linear_batch(x, &layer).unwrap(), &up)),
    ));
    let nw = numeric_grad(&layer.weights, H, |w| {
        dot(
            &linear_batch(&x, &LinearLayer::new(w.clone(), layer.bias.clone()).unwrap()).unwrap(),
            &up,
        )
    });
    errs.push(err("linear weights", &gw, &nw));
    let nb = numeric_grad(&layer.bias, H, |b| {
        dot(
            &linear_batch(&x, &LinearLayer::new(layer.weights.clone(), b.clone()).unwrap()).unwrap(),
            &up,
        )
    });
    errs.push(err("linear bias", &gb, &nb));
}

pub fn relu_gradient_away_from_the_kink(errs: &mut Vec<(String, f64)>) {
    let mut r = rng(4);
    let mut x = random_tensor(&[3, 5, 5], &mut r);
    for v in x.data_mut() {
        if v.abs() < 0.05 {
            *v += 0.1;
        }
    }
    let up = random_tensor(x.shape(), &mut r);
    let g = relu_grad(&x, &up).unwrap();
    errs.push(err("relu", &g, &numeric_grad(&x, H, |x| dot(&relu(x), &up))));
}

pub fn maxpool_gradient(errs: &mut Vec<(String, f64)>) {
    let mut r = rng(5);
    let x = random_tensor(&[2, 7, 6], &mut r);
    let (y, idx) = maxpool2(&x).unwrap();
    let up = random_tensor(y.shape(), &mut r);
    let g = maxpool2_grad(&idx, &up).unwrap();
    errs.push(err(
        "maxpool",
        &g,
        &numeric_grad(&x, H, |x| dot(&maxpool2(x).unwrap().0, &up)),
    ));
}

pub fn softmax_cross_entropy_gradient(errs: &mut Vec<(String, f64)>) {
    let mut r = rng(6);
    let logits = random_tensor(&[5, 2], &mut r);
    let labels = [0, 1, 1, 0, 1];
    let (_, g) = softmax_cross_entropy_batch(&logits, &labels).unwrap();
    let n = numeric_grad(&logits, H, |l| softmax_cross_entropy_batch(l, &labels).unwrap().0);
    errs.push(err("softmax cross-entropy", &g, &n));
}

pub fn batchnorm_training_gradients(errs: &mut Vec<(String, f64)>) {
    let mut r = rng(7);
    for shape in [vec![4, 3, 3, 2], vec![5, 4]] {
        let c = shape[1];
        let x = random_tensor(&shape, &mut r);
        let mut bn = BatchNorm::<f64>::new(c, 1e-5, 0.1);
        bn.gamma = random_tensor(&[c], &mut r);
        bn.beta = random_tensor(&[c], &mut r);
        let (y, cache) = batchnorm_forward(&x, &bn, true).unwrap();
        let up = random_tensor(y.shape(), &mut r);
        let g = batchnorm_grad(&cache, &bn, &up).unwrap();
        let f = |x: &Tensor<f64>, bn: &BatchNorm<f64>| dot(&batchnorm_forward(x, bn, true).unwrap().0, &up);
        errs.push(err("batchnorm input", &g.input, &numeric_grad(&x, H, |x| f(x, &bn))));
        let ng = numeric_grad(&bn.gamma, H, |gm| {
            let mut b = bn.clone();
            b.gamma = gm.clone();
            f(&x, &b)
        });
        errs.push(err("batchnorm gamma", &g.gamma, &ng));
        let nb = numeric_grad(&bn.beta, H, |bt| {
            let mut b = bn.clone();
            b.beta = bt.clone();
            f(&x, &b)
        });
        errs.push(err("batchnorm beta", &g.beta, &nb));
    }
}

pub fn batchnorm_inference_gradient(errs: &mut Vec<(String, f64)>) {
    let mut r = rng(8);
    let x = random_tensor(&[3, 2, 4, 4], &mut r);
    let mut bn = BatchNorm::<f64>::new(2, 1e-5, 0.1);
    bn.running_mean = random_tensor(&[2], &mut r);
    bn.running_var = Tensor::from_vec(vec![0.7, 1.9]).unwrap();
    bn.gamma = random_tensor(&[2], &mut r);
    let (y, cache) = batchnorm_forward(&x, &bn, false).unwrap();
    let up = random_tensor(y.shape(), &mut r);
    let g = batchnorm_grad(&cache, &bn, &up).unwrap();
    errs.push(err(
        "batchnorm eval input",
        &g.input,
        &numeric_grad(&x, H, |x| dot(&batchnorm_forward(x, &bn, false).unwrap().0, &up)),
    ));
}

pub fn dropout_gradient_is_the_mask(errs: &mut Vec<(String, f64)>) {
    let mut r = rng(9);
    let x = random_tensor(&[4, 6], &mut r);
    let mask = dropout_mask::<f64, _>(x.shape(), 0.25, &mut r);
    let up = random_tensor(x.shape(), &mut r);
    let g = dropout_apply(&up, &mask);
    errs.push(err(
        "dropout",
        &g,
        &numeric_grad(&x, H, |x| dot(&dropout_apply(x, &mask), &up)),
    ));
}

/// f32 analytic gradients of the whole network against an f64 finite
/// difference oracle on the same weights.
fn check_network(config: &ArchitectureConfig, seed: u64, errs: &mut Vec<(String, f64)>) {
    let net32 = Network::<f32>::new(config, seed).unwrap();
    let mut r = rng(seed + 100);
    let x64 = random_tensor(&[4, 3, 8, 8], &mut r);
    let x32: Tensor<f32> = x64.cast();
    let labels = [0, 1, 1, 0];
    let mode = ForwardMode::Train { seed: 77 };

    let (_, cache) = net32.forward(&x32, mode).unwrap();
    let (_, grads) = net32.backward(&cache, &labels).unwrap();

    let net64: Network<f64> = net32.cast();
    let params64: Vec<Tensor<f64>> = net64.params().into_iter().cloned().collect();
    assert_eq!(params64.len(), grads.tensors.len());
    let scale = grads.tensors.iter().map(|g| (g.sq_norm() as f64).sqrt()).sum::<f64>();
    for (p, (param, analytic)) in params64.iter().zip(&grads.tensors).enumerate() {
        let numeric = numeric_grad(param, 1e-5, |probe| {
            let mut n = net64.clone();
            *n.params_mut()[p] = probe.clone();
            let (_, c) = n.forward(&x64, mode).unwrap();
            n.backward(&c, &labels).unwrap().0
        });
        let a: Vec<f64> = analytic.data().iter().map(|&v| v as f64).collect();
        let e = rel_error_floor(&a, numeric.data(), 1e-3 * scale);
        errs.push((format!("{} parameter tensor {p}", config.name), e));
    }
}

pub fn whole_network_gradients(errs: &mut Vec<(String, f64)>) {
    check_network(&toy_config(), 1, errs);
}

pub fn whole_network_gradients_with_batchnorm_and_dropout(errs: &mut Vec<(String, f64)>) {
    let cfg = with_dropout(&with_batchnorm(&toy_config()).unwrap(), 0.25).unwrap();
    check_network(&cfg, 2, errs);
}
