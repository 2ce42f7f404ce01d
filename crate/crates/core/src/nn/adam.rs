//! Adam with bias correction, plus the plain SGD step used by the literal
//! weighted-gradient update rule.

use super::{ParamSet, Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper { learning_rate: 1e-3, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// First/second-moment accumulators mirroring a parameter set.
#[derive(Debug, Clone)]
pub struct AdamState<T> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub step: u64,
    pub hyper: AdamHyper,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &ParamSet<T>, hyper: AdamHyper) -> Self {
        let zeros = || params.tensors.iter().map(|t| Tensor::zeros(t.shape.clone())).collect();
        AdamState { m: zeros(), v: zeros(), step: 0, hyper }
    }
}

/// One Adam update with bias-corrected moment estimates:
/// `p -= lr * m_hat / (sqrt(v_hat) + eps)`.
pub fn adam_step<T: Scalar>(params: &mut ParamSet<T>, grads: &ParamSet<T>, state: &mut AdamState<T>) {
    state.step += 1;
    let t = state.step as i32;
    let h = state.hyper;
    let (b1, b2) = (T::from_f64(h.beta1), T::from_f64(h.beta2));
    let (one_m_b1, one_m_b2) = (T::from_f64(1.0 - h.beta1), T::from_f64(1.0 - h.beta2));
    let inv_bc1 = T::from_f64(1.0 / (1.0 - h.beta1.powi(t)));
    let inv_bc2 = T::from_f64(1.0 / (1.0 - h.beta2.powi(t)));
    let (lr, eps) = (T::from_f64(h.learning_rate), T::from_f64(h.epsilon));
    for ((p, g), (m, v)) in params
        .tensors
        .iter_mut()
        .zip(&grads.tensors)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        for (((pv, &gv), mv), vv) in
            p.data.iter_mut().zip(&g.data).zip(m.data.iter_mut()).zip(v.data.iter_mut())
        {
            *mv = b1 * *mv + one_m_b1 * gv;
            *vv = b2 * *vv + one_m_b2 * gv * gv;
            let m_hat = *mv * inv_bc1;
            let v_hat = *vv * inv_bc2;
            *pv = *pv - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

/// Plain gradient-descent step, `theta <- theta - lr * g`.
pub fn sgd_step<T: Scalar>(params: &mut ParamSet<T>, grads: &ParamSet<T>, learning_rate: f64) {
    let lr = T::from_f64(learning_rate);
    for (p, g) in params.tensors.iter_mut().zip(&grads.tensors) {
        for (pv, &gv) in p.data.iter_mut().zip(&g.data) {
            *pv = *pv - lr * gv;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_params(x: f64) -> ParamSet<f64> {
        ParamSet { tensors: vec![Tensor::new(vec![1], vec![x])] }
    }

    #[test]
    fn zero_gradient_leaves_fresh_state_unchanged() {
        let mut p = scalar_params(1.25);
        let g = scalar_params(0.0);
        let mut st = AdamState::new(&p, AdamHyper::default());
        for _ in 0..5 {
            adam_step(&mut p, &g, &mut st);
        }
        assert_eq!(p.tensors[0].data[0], 1.25);
    }

    #[test]
    fn constant_gradient_approaches_sign_step() {
        let mut p = scalar_params(0.0);
        let g = scalar_params(3.7);
        let hyper = AdamHyper::default();
        let mut st = AdamState::new(&p, hyper);
        let mut prev = 0.0;
        for _ in 0..500 {
            prev = p.tensors[0].data[0];
            adam_step(&mut p, &g, &mut st);
        }
        let step = prev - p.tensors[0].data[0];
        assert!((step - hyper.learning_rate).abs() < 1e-5, "step {step}");
    }

    #[test]
    fn three_step_trace_matches_hand_computation() {
        // Independent scalar recomputation of the update rule.
        let hyper = AdamHyper { learning_rate: 0.1, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 };
        let grads = [0.5, -1.0, 0.25];
        let mut expected = 2.0f64;
        let (mut m, mut v) = (0.0f64, 0.0f64);
        for (i, &g) in grads.iter().enumerate() {
            let t = (i + 1) as i32;
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let m_hat = m / (1.0 - 0.9f64.powi(t));
            let v_hat = v / (1.0 - 0.999f64.powi(t));
            expected -= 0.1 * m_hat / (v_hat.sqrt() + 1e-8);
        }

        let mut p = scalar_params(2.0);
        let mut st = AdamState::new(&p, hyper);
        for &g in &grads {
            adam_step(&mut p, &scalar_params(g), &mut st);
        }
        assert!(
            (p.tensors[0].data[0] - expected).abs() < 1e-12,
            "got {} want {expected}",
            p.tensors[0].data[0]
        );
    }

    #[test]
    fn sgd_is_literal() {
        let mut p = scalar_params(1.0);
        sgd_step(&mut p, &scalar_params(0.5), 0.2);
        assert!((p.tensors[0].data[0] - 0.9).abs() < 1e-15);
    }
}
