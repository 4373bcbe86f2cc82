use rayon::prelude::*;

use super::{axpy, dot, BatchGrads};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Output extent of a convolution along one axis:
/// `floor((input + 2 * padding - kernel) / stride) + 1`.
///
/// Returns `None` when the padded input is smaller than the kernel or the
/// stride is zero.
pub fn conv_output_extent(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = input + 2 * padding;
    if stride == 0 || kernel == 0 || padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

/// Bank of `out_channels` filters of size `in_channels x kh x kw` with one bias
/// per output channel.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvKernel<T> {
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
    pub stride: usize,
    pub padding: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvGrads<T> {
    pub input: Tensor<T>,
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> ConvKernel<T> {
    pub fn new(weights: Tensor<T>, bias: Tensor<T>, stride: usize, padding: usize) -> Result<Self> {
        let s = weights.shape();
        if s.len() != 4 {
            return Err(Error::invalid(format!(
                "conv weights must be 4-d [out, in, kh, kw], got {s:?}"
            )));
        }
        if s[2] % 2 == 0 || s[3] % 2 == 0 {
            return Err(Error::invalid(format!(
                "conv kernel extents must be odd, got {}x{}",
                s[2], s[3]
            )));
        }
        if stride == 0 {
            return Err(Error::invalid("conv stride must be positive"));
        }
        bias.ensure_shape("conv bias", &[s[0]])?;
        Ok(Self {
            weights,
            bias,
            stride,
            padding,
        })
    }

    pub fn zeros(out_channels: usize, in_channels: usize, kh: usize, kw: usize) -> Result<Self> {
        Self::new(
            Tensor::zeros(&[out_channels, in_channels, kh, kw]),
            Tensor::zeros(&[out_channels]),
            1,
            0,
        )
    }

    pub fn out_channels(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn kernel_size(&self) -> (usize, usize) {
        (self.weights.shape()[2], self.weights.shape()[3])
    }

    /// `(kh * kw * in_channels + 1) * out_channels`
    pub fn parameter_count(&self) -> usize {
        let (kh, kw) = self.kernel_size();
        (kh * kw * self.in_channels() + 1) * self.out_channels()
    }

    /// Output shape `[K, H', W']` for an input of shape `[C, H, W]`.
    pub fn output_shape(&self, input: &[usize]) -> Result<[usize; 3]> {
        if input.len() != 3 || input[0] != self.in_channels() {
            return Err(Error::invalid(format!(
                "conv2d input shape {input:?} incompatible with kernel shape {:?}",
                self.weights.shape()
            )));
        }
        let (kh, kw) = self.kernel_size();
        let ho = conv_output_extent(input[1], kh, self.stride, self.padding);
        let wo = conv_output_extent(input[2], kw, self.stride, self.padding);
        match (ho, wo) {
            (Some(ho), Some(wo)) => Ok([self.out_channels(), ho, wo]),
            _ => Err(Error::invalid(format!(
                "conv2d input shape {input:?} is smaller than kernel shape {:?}",
                self.weights.shape()
            ))),
        }
    }
}

/// Output positions `o` in `[lo, hi)` whose source index `o * stride + offset - padding`
/// lies inside `[0, n_in)`.
fn valid_range(n_out: usize, n_in: usize, stride: usize, padding: usize, offset: usize) -> (usize, usize) {
    let lo = if padding > offset {
        (padding - offset).div_ceil(stride)
    } else {
        0
    };
    let hi = if n_in + padding > offset {
        ((n_in - 1 + padding - offset) / stride + 1).min(n_out)
    } else {
        0
    };
    (lo.min(hi), hi)
}

struct Geometry {
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
    stride: usize,
    pad: usize,
}

impl Geometry {
    fn of<T: Scalar>(kernel: &ConvKernel<T>, sample_shape: &[usize]) -> Result<Self> {
        let [k, ho, wo] = kernel.output_shape(sample_shape)?;
        let (kh, kw) = kernel.kernel_size();
        Ok(Self {
            c: sample_shape[0],
            h: sample_shape[1],
            w: sample_shape[2],
            k,
            kh,
            kw,
            ho,
            wo,
            stride: kernel.stride,
            pad: kernel.padding,
        })
    }
}

/// Cross-correlation of one sample. Each output element accumulates its
/// window terms in (channel, row, column) order starting from zero, then adds
/// the bias.
fn forward_sample<T: Scalar>(g: &Geometry, input: &[T], weights: &[T], bias: &[T], out: &mut [T]) {
    out.fill(T::zero());
    let plane_in = g.h * g.w;
    let plane_out = g.ho * g.wo;
    for k in 0..g.k {
        let out_k = &mut out[k * plane_out..(k + 1) * plane_out];
        for c in 0..g.c {
            let in_c = &input[c * plane_in..(c + 1) * plane_in];
            for i in 0..g.kh {
                let (y_lo, y_hi) = valid_range(g.ho, g.h, g.stride, g.pad, i);
                for j in 0..g.kw {
                    let wv = weights[((k * g.c + c) * g.kh + i) * g.kw + j];
                    let (x_lo, x_hi) = valid_range(g.wo, g.w, g.stride, g.pad, j);
                    if x_lo >= x_hi {
                        continue;
                    }
                    for y in y_lo..y_hi {
                        let iy = y * g.stride + i - g.pad;
                        let row_in = &in_c[iy * g.w..(iy + 1) * g.w];
                        let row_out = &mut out_k[y * g.wo + x_lo..y * g.wo + x_hi];
                        let ix0 = x_lo * g.stride + j - g.pad;
                        if g.stride == 1 {
                            axpy(wv, &row_in[ix0..ix0 + (x_hi - x_lo)], row_out);
                        } else {
                            for (n, o) in row_out.iter_mut().enumerate() {
                                *o += wv * row_in[ix0 + n * g.stride];
                            }
                        }
                    }
                }
            }
        }
        let b = bias[k];
        for o in out_k.iter_mut() {
            *o += b;
        }
    }
}

/// Accumulates this sample's weight and bias gradients into `gw`/`gb` and,
/// when `gin` is given, writes the input gradient into it.
fn backward_sample<T: Scalar>(
    g: &Geometry,
    input: &[T],
    weights: &[T],
    upstream: &[T],
    gw: &mut [T],
    gb: &mut [T],
    gin: Option<&mut [T]>,
) {
    let plane_in = g.h * g.w;
    let plane_out = g.ho * g.wo;
    for k in 0..g.k {
        let up_k = &upstream[k * plane_out..(k + 1) * plane_out];
        gb[k] += up_k.iter().copied().sum::<T>();
        for c in 0..g.c {
            let in_c = &input[c * plane_in..(c + 1) * plane_in];
            for i in 0..g.kh {
                let (y_lo, y_hi) = valid_range(g.ho, g.h, g.stride, g.pad, i);
                for j in 0..g.kw {
                    let (x_lo, x_hi) = valid_range(g.wo, g.w, g.stride, g.pad, j);
                    if x_lo >= x_hi {
                        continue;
                    }
                    let ix0 = x_lo * g.stride + j - g.pad;
                    let mut acc = T::zero();
                    for y in y_lo..y_hi {
                        let iy = y * g.stride + i - g.pad;
                        let row_in = &in_c[iy * g.w..(iy + 1) * g.w];
                        let row_up = &up_k[y * g.wo + x_lo..y * g.wo + x_hi];
                        if g.stride == 1 {
                            acc += dot(row_up, &row_in[ix0..ix0 + (x_hi - x_lo)]);
                        } else {
                            for (n, &u) in row_up.iter().enumerate() {
                                acc += u * row_in[ix0 + n * g.stride];
                            }
                        }
                    }
                    gw[((k * g.c + c) * g.kh + i) * g.kw + j] += acc;
                }
            }
        }
    }

    let Some(gin) = gin else { return };
    gin.fill(T::zero());
    for k in 0..g.k {
        let up_k = &upstream[k * plane_out..(k + 1) * plane_out];
        for c in 0..g.c {
            let gin_c = &mut gin[c * plane_in..(c + 1) * plane_in];
            for i in 0..g.kh {
                let (y_lo, y_hi) = valid_range(g.ho, g.h, g.stride, g.pad, i);
                for j in 0..g.kw {
                    let wv = weights[((k * g.c + c) * g.kh + i) * g.kw + j];
                    let (x_lo, x_hi) = valid_range(g.wo, g.w, g.stride, g.pad, j);
                    if x_lo >= x_hi {
                        continue;
                    }
                    let ix0 = x_lo * g.stride + j - g.pad;
                    for y in y_lo..y_hi {
                        let iy = y * g.stride + i - g.pad;
                        let row_up = &up_k[y * g.wo + x_lo..y * g.wo + x_hi];
                        let row_gin = &mut gin_c[iy * g.w..(iy + 1) * g.w];
                        if g.stride == 1 {
                            axpy(wv, row_up, &mut row_gin[ix0..ix0 + (x_hi - x_lo)]);
                        } else {
                            for (n, &u) in row_up.iter().enumerate() {
                                row_gin[ix0 + n * g.stride] += wv * u;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// 2-d cross-correlation of a `[C, H, W]` input.
pub fn conv2d<T: Scalar>(input: &Tensor<T>, kernel: &ConvKernel<T>) -> Result<Tensor<T>> {
    let g = Geometry::of(kernel, input.shape())?;
    let mut out = Tensor::zeros(&[g.k, g.ho, g.wo]);
    forward_sample(
        &g,
        input.data(),
        kernel.weights.data(),
        kernel.bias.data(),
        out.data_mut(),
    );
    Ok(out)
}

/// [`conv2d`] over a `[B, C, H, W]` batch.
pub fn conv2d_batch<T: Scalar>(input: &Tensor<T>, kernel: &ConvKernel<T>) -> Result<Tensor<T>> {
    if input.shape().len() != 4 {
        return Err(Error::invalid(format!(
            "conv2d_batch expects [B, C, H, W], got {:?}",
            input.shape()
        )));
    }
    let b = input.shape()[0];
    let g = Geometry::of(kernel, &input.shape()[1..])?;
    let mut out = Tensor::zeros(&[b, g.k, g.ho, g.wo]);
    let in_len = g.c * g.h * g.w;
    let out_len = g.k * g.ho * g.wo;
    out.data_mut()
        .par_chunks_mut(out_len)
        .zip(input.data().par_chunks(in_len))
        .for_each(|(o, x)| forward_sample(&g, x, kernel.weights.data(), kernel.bias.data(), o));
    Ok(out)
}

/// Gradients of a single-sample convolution given the upstream gradient of
/// its output.
pub fn conv2d_grad<T: Scalar>(input: &Tensor<T>, kernel: &ConvKernel<T>, upstream: &Tensor<T>) -> Result<ConvGrads<T>> {
    let g = Geometry::of(kernel, input.shape())?;
    upstream.ensure_shape("conv2d_grad upstream", &[g.k, g.ho, g.wo])?;
    let mut gw = Tensor::zeros(kernel.weights.shape());
    let mut gb = Tensor::zeros(&[g.k]);
    let mut gin = Tensor::zeros(input.shape());
    backward_sample(
        &g,
        input.data(),
        kernel.weights.data(),
        upstream.data(),
        gw.data_mut(),
        gb.data_mut(),
        Some(gin.data_mut()),
    );
    Ok(ConvGrads {
        input: gin,
        weights: gw,
        bias: gb,
    })
}

/// Batched gradients. Weight and bias gradients are summed over the batch in
/// sample order; the input gradient is only computed when `need_input` is set.
pub fn conv2d_grad_batch<T: Scalar>(
    input: &Tensor<T>,
    kernel: &ConvKernel<T>,
    upstream: &Tensor<T>,
    need_input: bool,
) -> Result<BatchGrads<T>> {
    if input.shape().len() != 4 {
        return Err(Error::invalid(format!(
            "conv2d_grad_batch expects [B, C, H, W], got {:?}",
            input.shape()
        )));
    }
    let b = input.shape()[0];
    let g = Geometry::of(kernel, &input.shape()[1..])?;
    upstream.ensure_shape("conv2d_grad upstream", &[b, g.k, g.ho, g.wo])?;
    let in_len = g.c * g.h * g.w;
    let out_len = g.k * g.ho * g.wo;

    // Per-sample partial weight gradients, reduced afterwards in sample order
    // so the result does not depend on scheduling.
    let wlen = kernel.weights.len();
    let mut gin = need_input.then(|| Tensor::zeros(input.shape()));
    let partials: Vec<(Vec<T>, Vec<T>)> = match gin.as_mut() {
        Some(gin) => gin
            .data_mut()
            .par_chunks_mut(in_len)
            .zip(input.data().par_chunks(in_len))
            .zip(upstream.data().par_chunks(out_len))
            .map(|((gi, x), up)| {
                let mut gw = vec![T::zero(); wlen];
                let mut gb = vec![T::zero(); g.k];
                backward_sample(&g, x, kernel.weights.data(), up, &mut gw, &mut gb, Some(gi));
                (gw, gb)
            })
            .collect(),
        None => input
            .data()
            .par_chunks(in_len)
            .zip(upstream.data().par_chunks(out_len))
            .map(|(x, up)| {
                let mut gw = vec![T::zero(); wlen];
                let mut gb = vec![T::zero(); g.k];
                backward_sample(&g, x, kernel.weights.data(), up, &mut gw, &mut gb, None);
                (gw, gb)
            })
            .collect(),
    };
    let mut gw = Tensor::zeros(kernel.weights.shape());
    let mut gb = Tensor::zeros(&[g.k]);
    for (pw, pb) in partials {
        for (d, s) in gw.data_mut().iter_mut().zip(pw) {
            *d += s;
        }
        for (d, s) in gb.data_mut().iter_mut().zip(pb) {
            *d += s;
        }
    }
    Ok((gin, gw, gb))
}
