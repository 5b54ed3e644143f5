use crate::error::{Error, Result};
use crate::tensor::{Float, Tensor};

/// Mean softmax cross-entropy over a batch, with its gradient w.r.t. the logits.
///
/// `grad = (softmax - onehot) / batch`.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(Float, Tensor)> {
    if logits.shape().len() != 2 || logits.rows() != labels.len() {
        return Err(Error::shape(
            "softmax_cross_entropy",
            &[labels.len(), logits.shape().get(1).copied().unwrap_or(0)],
            logits.shape(),
        ));
    }
    let classes = logits.shape()[1];
    let n = labels.len();
    let mut grad = Vec::with_capacity(n * classes);
    let mut total = 0.0f64;
    for (i, &label) in labels.iter().enumerate() {
        if label >= classes {
            return Err(Error::InvalidArgument(format!(
                "label {label} out of range for {classes} classes"
            )));
        }
        let row = logits.row(i);
        let max = row.iter().fold(Float::NEG_INFINITY, |m, &v| m.max(v)) as f64;
        let exps: Vec<f64> = row.iter().map(|&v| (v as f64 - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        total += sum.ln() - (row[label] as f64 - max);
        for (j, e) in exps.iter().enumerate() {
            let p = e / sum - if j == label { 1.0 } else { 0.0 };
            grad.push((p / n as f64) as Float);
        }
    }
    let loss = total / n as f64;
    if !loss.is_finite() {
        return Err(Error::NonFinite("cross-entropy loss".into()));
    }
    Ok((loss as Float, Tensor::new(logits.shape().to_vec(), grad)?))
}
