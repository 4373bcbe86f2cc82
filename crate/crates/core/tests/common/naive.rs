//! Direct nested-loop convolution, the oracle for the optimized kernels.

use pvfaultnet::ops::{conv_output_extent, ConvKernel};
use pvfaultnet::Tensor;
use rand::Rng;

use super::random_tensor;

/// `y[b,k,oy,ox] = bias[k] + sum_{c,i,j} w[k,c,i,j] * x_padded[b,c,oy*s+i-p,ox*s+j-p]`,
/// summed in (c, i, j) order with the bias added last. Padded taps are skipped:
/// they contribute an exact zero.
pub fn naive_conv(x: &Tensor<f64>, k: &ConvKernel<f64>) -> Tensor<f64> {
    let [b, c, h, w] = x.shape().try_into().unwrap();
    let [nk, _, kh, kw] = k.weights.shape().try_into().unwrap();
    let (s, p) = (k.stride, k.padding);
    let ho = (h + 2 * p - kh) / s + 1;
    let wo = (w + 2 * p - kw) / s + 1;
    let mut out = Tensor::zeros(&[b, nk, ho, wo]);
    for n in 0..b {
        for f in 0..nk {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = 0.0;
                    for ch in 0..c {
                        for i in 0..kh {
                            for j in 0..kw {
                                let (iy, ix) = ((oy * s + i) as isize - p as isize, (ox * s + j) as isize - p as isize);
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                let wv = k.weights.get(&[f, ch, i, j]).unwrap();
                                acc += wv * x.get(&[n, ch, iy as usize, ix as usize]).unwrap();
                            }
                        }
                    }
                    acc += k.bias.data()[f];
                    out.set(&[n, f, oy, ox], acc).unwrap();
                }
            }
        }
    }
    out
}

/// Input, weight and bias gradients of `sum(y * upstream)` by the same loops.
pub fn naive_grads(x: &Tensor<f64>, k: &ConvKernel<f64>, up: &Tensor<f64>) -> (Tensor<f64>, Tensor<f64>, Tensor<f64>) {
    let [b, c, h, w] = x.shape().try_into().unwrap();
    let [nk, _, kh, kw] = k.weights.shape().try_into().unwrap();
    let [_, _, ho, wo] = up.shape().try_into().unwrap();
    let (s, p) = (k.stride as isize, k.padding as isize);
    let mut gx = Tensor::zeros(x.shape());
    let mut gw = Tensor::zeros(k.weights.shape());
    let mut gb = Tensor::zeros(k.bias.shape());
    for n in 0..b {
        for f in 0..nk {
            for oy in 0..ho {
                for ox in 0..wo {
                    let u = up.get(&[n, f, oy, ox]).unwrap();
                    gb.data_mut()[f] += u;
                    for ch in 0..c {
                        for i in 0..kh {
                            for j in 0..kw {
                                let iy = oy as isize * s + i as isize - p;
                                let ix = ox as isize * s + j as isize - p;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                let xi = [n, ch, iy as usize, ix as usize];
                                let wi = [f, ch, i, j];
                                let (xv, wv) = (x.get(&xi).unwrap(), k.weights.get(&wi).unwrap());
                                gw.set(&wi, gw.get(&wi).unwrap() + u * xv).unwrap();
                                gx.set(&xi, gx.get(&xi).unwrap() + u * wv).unwrap();
                            }
                        }
                    }
                }
            }
        }
    }
    (gx, gw, gb)
}

pub struct Case {
    pub x: Tensor<f64>,
    pub kernel: ConvKernel<f64>,
}

/// Random geometry with batch <= 2, channels <= 2 and spatial extents <= 8.
pub fn random_case(r: &mut impl Rng) -> Case {
    loop {
        let (b, c) = (r.random_range(1..=2), r.random_range(1..=2));
        let (h, w) = (r.random_range(1..=8), r.random_range(1..=8));
        let (kh, kw) = (r.random_range(1..=3), r.random_range(1..=3));
        let (stride, padding) = (r.random_range(1..=2), r.random_range(0..=1));
        if conv_output_extent(h, kh, stride, padding).is_none() || conv_output_extent(w, kw, stride, padding).is_none()
        {
            continue;
        }
        let filters = r.random_range(1..=3);
        return Case {
            x: random_tensor(&[b, c, h, w], r),
            kernel: ConvKernel {
                weights: random_tensor(&[filters, c, kh, kw], r),
                bias: random_tensor(&[filters], r),
                stride,
                padding,
            },
        };
    }
}
