//! Softmax cross-entropy, stabilized by max subtraction.

use super::{Scalar, Tensor};

/// Loss and logit gradient for one sample: `grad = softmax(logits) - onehot`.
pub fn softmax_cross_entropy<T: Scalar>(logits: &[T], label: usize) -> (T, Vec<T>) {
    debug_assert!(label < logits.len());
    let max = logits.iter().cloned().fold(T::neg_infinity(), T::max);
    let mut grad: Vec<T> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: T = grad.iter().cloned().sum();
    let loss = sum.ln() - (logits[label] - max);
    let inv = T::one() / sum;
    for (i, g) in grad.iter_mut().enumerate() {
        *g = *g * inv;
        if i == label {
            *g -= T::one();
        }
    }
    (loss, grad)
}

/// Mean loss over a `(batch, classes)` logit tensor; the returned gradient is
/// already scaled by `1/batch`.
pub fn softmax_cross_entropy_batch<T: Scalar>(
    logits: &Tensor<T>,
    labels: &[u8],
) -> (T, Tensor<T>) {
    let (batch, classes) = (logits.shape[0], logits.shape[1]);
    debug_assert_eq!(batch, labels.len());
    let mut grads = Tensor::zeros(logits.shape.clone());
    let mut total = T::zero();
    let inv_batch = T::from_f64(1.0 / batch as f64);
    for b in 0..batch {
        let (loss, g) =
            softmax_cross_entropy(&logits.data[b * classes..(b + 1) * classes], labels[b] as usize);
        total += loss;
        for (dst, gv) in grads.data[b * classes..(b + 1) * classes].iter_mut().zip(g) {
            *dst = gv * inv_batch;
        }
    }
    (total * inv_batch, grads)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_ln_k() {
        let logits = [0.0f64; 10];
        let (loss, grad) = softmax_cross_entropy(&logits, 3);
        assert!((loss - 10f64.ln()).abs() < 1e-12);
        for (i, g) in grad.iter().enumerate() {
            let want = if i == 3 { 0.1 - 1.0 } else { 0.1 };
            assert!((g - want).abs() < 1e-12);
        }
    }

    #[test]
    fn peaked_logits_drive_loss_to_zero() {
        let mut logits = [0.0f64; 10];
        logits[7] = 50.0;
        let (loss, _) = softmax_cross_entropy(&logits, 7);
        assert!(loss < 1e-12);
        assert!(loss >= 0.0);
    }

    #[test]
    fn stable_under_large_offsets() {
        let logits = [1000.0f64, 1001.0, 999.0];
        let (loss, grad) = softmax_cross_entropy(&logits, 1);
        assert!(loss.is_finite());
        assert!(grad.iter().all(|g| g.is_finite()));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let logits = [0.3f64, -1.2, 0.7, 2.0, -0.5];
        let label = 2;
        let (_, grad) = softmax_cross_entropy(&logits, label);
        let eps = 1e-7;
        for i in 0..logits.len() {
            let mut up = logits;
            up[i] += eps;
            let mut dn = logits;
            dn[i] -= eps;
            let fd = (softmax_cross_entropy(&up, label).0 - softmax_cross_entropy(&dn, label).0)
                / (2.0 * eps);
            let rel = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-12);
            assert!(rel < 1e-6, "component {i}: fd {fd} analytic {}", grad[i]);
        }
    }

    #[test]
    fn batch_mean_and_scaling() {
        let logits = Tensor::new(vec![2, 3], vec![0.0, 0.0, 0.0, 5.0, 0.0, 0.0]);
        let (loss, grads) = softmax_cross_entropy_batch(&logits, &[0, 0]);
        let l0 = 3f64.ln();
        let l1 = softmax_cross_entropy(&[5.0, 0.0, 0.0], 0).0;
        assert!((loss - 0.5 * (l0 + l1)).abs() < 1e-12);
        assert!((grads.data[0] - 0.5 * (1.0 / 3.0 - 1.0)).abs() < 1e-12);
    }
}
