use super::Matrix;
use crate::error::{Error, Result};

/// Mean softmax cross-entropy over the output columns `[start, end)`.
///
/// The softmax is normalized over the slice alone; `labels` are indices
/// relative to `start`. The returned gradient has the shape of `logits`, is
/// `(softmax - onehot) / n` inside the slice and exactly zero elsewhere.
pub fn softmax_xent_slice(
    logits: &Matrix,
    labels: &[usize],
    start: usize,
    end: usize,
) -> Result<(f64, Matrix)> {
    let (n, total) = logits.shape();
    if start >= end || end > total {
        return Err(Error::input(format!(
            "slice [{start}, {end}) invalid for {total} output neurons"
        )));
    }
    if labels.len() != n {
        return Err(Error::input(format!(
            "{} labels for {n} rows",
            labels.len()
        )));
    }
    if n == 0 {
        return Err(Error::input("empty batch"));
    }
    let width = end - start;
    if let Some(&bad) = labels.iter().find(|&&y| y >= width) {
        return Err(Error::input(format!(
            "label {bad} outside slice of width {width}"
        )));
    }

    let inv_n = 1.0 / n as f64;
    let mut loss = 0.0;
    let mut grad = Matrix::zeros(n, total);
    for (i, &y) in labels.iter().enumerate() {
        let z = &logits.row(i)[start..end];
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = z.iter().map(|v| (v - max).exp()).sum();
        let log_sum = max + sum.ln();
        loss += log_sum - z[y];
        let g = &mut grad.row_mut(i)[start..end];
        for (j, (gj, zj)) in g.iter_mut().zip(z).enumerate() {
            let p = (zj - log_sum).exp();
            *gj = (p - if j == y { 1.0 } else { 0.0 }) * inv_n;
        }
    }
    let loss = loss * inv_n;
    if !loss.is_finite() {
        return Err(Error::Numeric(format!("non-finite loss {loss}")));
    }
    Ok((loss, grad))
}
