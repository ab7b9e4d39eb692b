use super::matrix::Matrix;
use crate::error::{Error, Result};

/// Row-wise softmax with per-row max subtraction.
pub fn softmax(logits: &Matrix) -> Matrix {
    let mut out = logits.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

/// Pulls a gradient w.r.t. softmax outputs back to the logits:
/// `dz = p ⊙ (g − ⟨g, p⟩)` per row.
pub fn softmax_backward(probs: &Matrix, grad_probs: &Matrix) -> Result<Matrix> {
    if probs.shape() != grad_probs.shape() {
        return Err(Error::shape(format!(
            "softmax_backward {:?} vs {:?}",
            probs.shape(),
            grad_probs.shape()
        )));
    }
    let mut out = Matrix::zeros(probs.rows(), probs.cols());
    for r in 0..probs.rows() {
        let p = probs.row(r);
        let g = grad_probs.row(r);
        let inner: f64 = p.iter().zip(g).map(|(a, b)| a * b).sum();
        for ((o, &pi), &gi) in out.row_mut(r).iter_mut().zip(p).zip(g) {
            *o = pi * (gi - inner);
        }
    }
    Ok(out)
}

/// Mean cross-entropy of softmax probabilities against class indices.
/// The gradient is taken w.r.t. the logits that produced `probs`.
pub fn loss_ce(probs: &Matrix, labels: &[usize]) -> Result<(f64, Matrix)> {
    if probs.rows() != labels.len() {
        return Err(Error::shape(format!(
            "{} probability rows for {} labels",
            probs.rows(),
            labels.len()
        )));
    }
    if probs.rows() == 0 {
        return Err(Error::invalid("cross-entropy of an empty batch"));
    }
    let n = probs.rows() as f64;
    let mut grad = probs.scale(1.0 / n);
    let mut total = 0.0;
    for (r, &label) in labels.iter().enumerate() {
        if label >= probs.cols() {
            return Err(Error::invalid(format!(
                "label {label} out of range for {} classes",
                probs.cols()
            )));
        }
        total -= probs.get(r, label).max(f64::MIN_POSITIVE).ln();
        let g = grad.get(r, label);
        grad.set(r, label, g - 1.0 / n);
    }
    Ok((total / n, grad))
}

/// Mean squared elementwise error and its gradient w.r.t. `pred`.
pub fn loss_mse(pred: &Matrix, target: &Matrix) -> Result<(f64, Matrix)> {
    if pred.shape() != target.shape() {
        return Err(Error::shape(format!(
            "mse of {:?} against {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    let count = pred.data().len();
    if count == 0 {
        return Err(Error::invalid("mse of an empty matrix"));
    }
    let diff = pred.sub(target)?;
    let value = diff.data().iter().map(|d| d * d).sum::<f64>() / count as f64;
    Ok((value, diff.scale(2.0 / count as f64)))
}
