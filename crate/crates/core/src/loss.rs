use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Mean softmax cross-entropy over the batch and its gradient w.r.t. the logits.
///
/// `dlogits = (softmax - onehot) / n`. An empty batch has loss 0.
pub fn softmax_cross_entropy<T: Scalar>(
    logits: &Tensor<T>,
    labels: &[usize],
) -> Result<(T, Tensor<T>)> {
    let n = logits.rows();
    if labels.len() != n || logits.shape().len() != 2 {
        return Err(Error::dim("softmax_cross_entropy", logits.shape(), &[labels.len()]));
    }
    let classes = logits.cols();
    if let Some((i, &y)) = labels.iter().enumerate().find(|(_, &y)| y >= classes) {
        return Err(Error::Data {
            index: i,
            reason: format!("label {y} out of range for {classes} classes"),
        });
    }
    let mut grad = Tensor::zeros(logits.shape());
    if n == 0 {
        return Ok((T::zero(), grad));
    }
    let inv_n = T::one() / T::lit(n as f64);
    let mut total = T::zero();
    for (i, &y) in labels.iter().enumerate() {
        let row = logits.row(i);
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let g = grad.row_mut(i);
        let mut denom = T::zero();
        for (gj, &z) in g.iter_mut().zip(row) {
            *gj = (z - max).exp();
            denom += *gj;
        }
        total += denom.ln() - (row[y] - max);
        for gj in g.iter_mut() {
            *gj = *gj / denom * inv_n;
        }
        g[y] -= inv_n;
    }
    Ok((total * inv_n, grad))
}
