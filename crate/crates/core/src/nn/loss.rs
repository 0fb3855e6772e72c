use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Softmax cross-entropy for one logit vector. Returns the loss and the
/// gradient `softmax(logits) - one_hot(label)`.
pub fn softmax_cross_entropy<S: Scalar>(logits: &[S], label: usize) -> Result<(S, Vec<S>)> {
    if label >= logits.len() {
        return Err(Error::InvalidArgument(format!(
            "label {label} out of range for {} classes",
            logits.len()
        )));
    }
    let max = logits
        .iter()
        .cloned()
        .fold(S::neg_infinity(), |a, b| if b > a { b } else { a });
    let mut grad: Vec<S> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: S = grad.iter().cloned().sum();
    for g in grad.iter_mut() {
        *g = *g / sum;
    }
    let loss = sum.ln() - (logits[label] - max);
    grad[label] = grad[label] - S::one();
    Ok((loss, grad))
}

/// Mean softmax cross-entropy over a `[N, k]` logit batch. The returned
/// gradient is already scaled by `1/N`.
pub fn softmax_cross_entropy_batch<S: Scalar>(
    logits: &Tensor<S>,
    labels: &[usize],
) -> Result<(S, Tensor<S>)> {
    let n = logits.shape()[0];
    if labels.len() != n {
        return Err(Error::InvalidArgument(format!(
            "{} labels for a batch of {n}",
            labels.len()
        )));
    }
    let k = logits.shape()[1];
    let inv_n = S::one() / S::from_f64(n as f64);
    let mut total = S::zero();
    let mut grad = Tensor::zeros(logits.shape());
    for i in 0..n {
        let (loss, g) = softmax_cross_entropy(logits.row(i), labels[i])?;
        total += loss;
        let row = &mut grad.data_mut()[i * k..(i + 1) * k];
        for (dst, src) in row.iter_mut().zip(g.iter()) {
            *dst = *src * inv_n;
        }
    }
    Ok((total * inv_n, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_loss_is_ln_k() {
        let logits = vec![0.7f64; 10];
        let (loss, _) = softmax_cross_entropy(&logits, 3).unwrap();
        assert!((loss - 10f64.ln()).abs() < 1e-12, "{loss}");
    }

    #[test]
    fn dominant_correct_logit_drives_loss_to_zero() {
        let logits = vec![60.0f64, 0.0, -5.0];
        let (loss, _) = softmax_cross_entropy(&logits, 0).unwrap();
        assert!(loss >= 0.0 && loss < 1e-12, "{loss}");
    }

    #[test]
    fn hand_evaluated_three_class_case() {
        // logits [1,2,3], label 2: loss = ln(e^1+e^2+e^3) - 3 ~ 0.40761.
        let (loss, grad) = softmax_cross_entropy(&[1.0f64, 2.0, 3.0], 2).unwrap();
        assert!((loss - 0.40760596444438079).abs() < 1e-12, "{loss}");
        let sum: f64 = grad.iter().sum();
        assert!(sum.abs() < 1e-12);
    }

    #[test]
    fn label_out_of_range_rejected() {
        assert!(softmax_cross_entropy(&[0.0f32, 1.0], 2).is_err());
    }

    #[test]
    fn gradient_components_sum_to_zero() {
        let logits = vec![0.3f64, -2.0, 11.0, 4.5, -0.1];
        for label in 0..logits.len() {
            let (_, grad) = softmax_cross_entropy(&logits, label).unwrap();
            let sum: f64 = grad.iter().sum();
            assert!(sum.abs() < 1e-12, "label {label}: {sum}");
        }
    }

    #[test]
    fn batch_loss_matches_mean_of_singles() {
        let logits =
            Tensor::from_vec(&[2, 3], vec![0.5f64, -1.0, 2.0, 3.0, 0.0, -0.5]).unwrap();
        let labels = [2usize, 0];
        let (batch_loss, grad) = softmax_cross_entropy_batch(&logits, &labels).unwrap();
        let (l0, g0) = softmax_cross_entropy(logits.row(0), labels[0]).unwrap();
        let (l1, g1) = softmax_cross_entropy(logits.row(1), labels[1]).unwrap();
        assert!((batch_loss - (l0 + l1) / 2.0).abs() < 1e-12);
        for j in 0..3 {
            assert!((grad.at2(0, j) - g0[j] / 2.0).abs() < 1e-12);
            assert!((grad.at2(1, j) - g1[j] / 2.0).abs() < 1e-12);
        }
    }
}
