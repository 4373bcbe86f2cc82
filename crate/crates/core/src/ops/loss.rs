use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Max-subtracted softmax.
pub fn softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let m = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&z| (z - m).exp()).collect();
    let total: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Cross-entropy `-ln softmax(logits)[label]` and its gradient
/// `softmax(logits) - onehot(label)`.
pub fn softmax_cross_entropy<T: Scalar>(logits: &[T], label: usize) -> Result<(T, Vec<T>)> {
    if label >= logits.len() {
        return Err(Error::invalid(format!(
            "label {label} out of range for {} logits",
            logits.len()
        )));
    }
    if logits.iter().any(|z| !z.is_finite()) {
        return Err(Error::NonFinite("logits"));
    }
    let (arg, m) =
        logits.iter().copied().enumerate().fold(
            (0, T::neg_infinity()),
            |best, (i, z)| if z > best.1 { (i, z) } else { best },
        );
    // the max term contributes exactly 1, so ln(1 + rest) keeps precision when saturated
    let rest: T = logits
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != arg)
        .map(|(_, &z)| (z - m).exp())
        .sum();
    let log_total = rest.ln_1p();
    let loss = -(logits[label] - m - log_total);
    let mut grad = softmax(logits);
    grad[label] -= T::one();
    Ok((loss, grad))
}

/// Mean cross-entropy over a `[B, classes]` batch; the returned gradient is
/// already divided by the batch size.
pub fn softmax_cross_entropy_batch<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<(T, Tensor<T>)> {
    let s = logits.shape();
    if s.len() != 2 || s[0] != labels.len() {
        return Err(Error::invalid(format!(
            "logits shape {s:?} does not match {} labels",
            labels.len()
        )));
    }
    let scale = T::one() / T::from_usize(s[0]).expect("batch size fits the scalar type");
    let mut total = T::zero();
    let mut grad = Vec::with_capacity(logits.len());
    for (n, &label) in labels.iter().enumerate() {
        let (l, g) = softmax_cross_entropy(logits.outer(n), label)?;
        total += l;
        grad.extend(g.into_iter().map(|v| v * scale));
    }
    Ok((total * scale, Tensor::new(s.to_vec(), grad)?))
}
