use super::{Matrix, Scalar};
use crate::error::{Error, Result};

/// Returns `-log softmax(logits)[target]` and its gradient
/// `softmax(logits) - onehot(target)`.
pub fn softmax_cross_entropy<T: Scalar>(logits: &[T], target: usize) -> Result<(T, Vec<T>)> {
    if target >= logits.len() {
        return Err(Error::TargetOutOfRange {
            target,
            classes: logits.len(),
        });
    }
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&v| (v - max).exp()).collect();
    let sum: T = exps.iter().copied().sum();
    let loss = sum.ln() - (logits[target] - max);
    let mut grad: Vec<T> = exps.iter().map(|&e| e / sum).collect();
    grad[target] = grad[target] - T::one();
    Ok((loss, grad))
}

/// Mean loss over the rows of `logits`; the returned gradient is already
/// divided by the batch size.
pub fn softmax_cross_entropy_batch<T: Scalar>(logits: &Matrix<T>, targets: &[usize]) -> Result<(T, Matrix<T>)> {
    if targets.len() != logits.rows() {
        return Err(Error::DimMismatch {
            context: "loss targets",
            expected: vec![logits.rows()],
            actual: vec![targets.len()],
        });
    }
    let n = T::from_usize(logits.rows()).expect("batch size fits");
    let mut grad = Matrix::zeros(logits.rows(), logits.cols());
    let mut total = T::zero();
    for (r, &t) in targets.iter().enumerate() {
        let (loss, g) = softmax_cross_entropy(logits.row(r), t)?;
        total += loss;
        for (dst, v) in grad.row_mut(r).iter_mut().zip(g) {
            *dst = v / n;
        }
    }
    Ok((total / n, grad))
}
