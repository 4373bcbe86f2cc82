use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// `floor((input - 2) / 2) + 1` for the 2x2, stride-2, unpadded window.
pub fn pool_output_extent(input: usize) -> Option<usize> {
    (input >= 2).then(|| (input - 2) / 2 + 1)
}

/// Flat input offsets of the selected maximum for every pooled output
/// element, plus the shape of the pooled input.
#[derive(Clone, Debug, PartialEq)]
pub struct PoolIndices {
    pub input_shape: Vec<usize>,
    pub output_shape: Vec<usize>,
    pub argmax: Vec<usize>,
}

fn pool_planes<T: Scalar>(data: &[T], planes: usize, h: usize, w: usize, out: &mut Vec<T>, argmax: &mut Vec<usize>) {
    let (ho, wo) = ((h - 2) / 2 + 1, (w - 2) / 2 + 1);
    for p in 0..planes {
        let base = p * h * w;
        for y in 0..ho {
            for x in 0..wo {
                let first = base + (2 * y) * w + 2 * x;
                let mut best = first;
                for off in [first + 1, first + w, first + w + 1] {
                    // strict comparison keeps the first maximum in row-major window order
                    if data[off] > data[best] {
                        best = off;
                    }
                }
                out.push(data[best]);
                argmax.push(best);
            }
        }
    }
}

/// 2x2 max-pooling with stride 2 over a `[C, H, W]` map.
pub fn maxpool2<T: Scalar>(input: &Tensor<T>) -> Result<(Tensor<T>, PoolIndices)> {
    let s = input.shape();
    if s.len() != 3 {
        return Err(Error::invalid(format!("maxpool2 expects [C, H, W], got {s:?}")));
    }
    pool_nd(input, s[0], s[1], s[2], |ho, wo| vec![s[0], ho, wo])
}

/// [`maxpool2`] over a `[B, C, H, W]` batch. Indices address the whole batch
/// tensor.
pub fn maxpool2_batch<T: Scalar>(input: &Tensor<T>) -> Result<(Tensor<T>, PoolIndices)> {
    let s = input.shape();
    if s.len() != 4 {
        return Err(Error::invalid(format!(
            "maxpool2_batch expects [B, C, H, W], got {s:?}"
        )));
    }
    pool_nd(input, s[0] * s[1], s[2], s[3], |ho, wo| vec![s[0], s[1], ho, wo])
}

fn pool_nd<T: Scalar>(
    input: &Tensor<T>,
    planes: usize,
    h: usize,
    w: usize,
    out_shape: impl FnOnce(usize, usize) -> Vec<usize>,
) -> Result<(Tensor<T>, PoolIndices)> {
    let (Some(ho), Some(wo)) = (pool_output_extent(h), pool_output_extent(w)) else {
        return Err(Error::invalid(format!(
            "maxpool2 needs spatial extents >= 2, got {:?}",
            input.shape()
        )));
    };
    let mut out = Vec::with_capacity(planes * ho * wo);
    let mut argmax = Vec::with_capacity(planes * ho * wo);
    pool_planes(input.data(), planes, h, w, &mut out, &mut argmax);
    let shape = out_shape(ho, wo);
    Ok((
        Tensor::new(shape.clone(), out)?,
        PoolIndices {
            input_shape: input.shape().to_vec(),
            output_shape: shape,
            argmax,
        },
    ))
}

/// Routes each upstream value to the input position that won its window.
/// Indices must come from [`maxpool2`] on that input; a stray index panics.
pub fn maxpool2_grad<T: Scalar>(indices: &PoolIndices, upstream: &Tensor<T>) -> Result<Tensor<T>> {
    upstream.ensure_shape("maxpool2_grad upstream", &indices.output_shape)?;
    let mut grad = Tensor::zeros(&indices.input_shape);
    let g = grad.data_mut();
    for (&idx, &u) in indices.argmax.iter().zip(upstream.data()) {
        assert!(
            idx < g.len(),
            "pool argmax index {idx} out of bounds for {} inputs",
            g.len()
        );
        g[idx] += u;
    }
    Ok(grad)
}
