//! Adam optimizer over [`MlpNet`] parameters, with bias correction and
//! per-layer moment buffers.

use super::{LayerGrads, MlpNet, NetGrads, NnError};

#[derive(Clone, Debug)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub(crate) m: Vec<LayerGrads>,
    pub(crate) v: Vec<LayerGrads>,
}

impl AdamState {
    pub fn new(net: &MlpNet, lr: f64) -> Self {
        let zeros = || NetGrads::zeros_like(net).layers;
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub(crate) fn from_parts(
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
        step: u64,
        m: Vec<LayerGrads>,
        v: Vec<LayerGrads>,
    ) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps,
            step,
            m,
            v,
        }
    }
}

/// One bias-corrected Adam update. Rejects non-finite gradients, naming the
/// offending parameter block.
pub fn adam_step(net: &mut MlpNet, grads: &NetGrads, st: &mut AdamState) -> Result<(), NnError> {
    if grads.layers.len() != net.layers().len() {
        return Err(NnError::ShapeMismatch { layer: 0 });
    }
    for (layer, g) in grads.layers.iter().enumerate() {
        if g.w.iter().any(|v| !v.is_finite()) {
            return Err(NnError::NonFiniteGrad { layer, block: "weights" });
        }
        if g.b.iter().any(|v| !v.is_finite()) {
            return Err(NnError::NonFiniteGrad { layer, block: "biases" });
        }
    }
    st.step += 1;
    let t = st.step as i32;
    let corr1 = 1.0 - st.beta1.powi(t);
    let corr2 = 1.0 - st.beta2.powi(t);
    for (l, layer) in net.layers_mut().iter_mut().enumerate() {
        let g = &grads.layers[l];
        let m = &mut st.m[l];
        let v = &mut st.v[l];
        update_block(&mut layer.w, &g.w, &mut m.w, &mut v.w, st.lr, st.beta1, st.beta2, st.eps, corr1, corr2);
        update_block(&mut layer.b, &g.b, &mut m.b, &mut v.b, st.lr, st.beta1, st.beta2, st.eps, corr1, corr2);
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn update_block(
    params: &mut [f64],
    grads: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    corr1: f64,
    corr2: f64,
) {
    for i in 0..params.len() {
        let g = grads[i];
        m[i] = beta1 * m[i] + (1.0 - beta1) * g;
        v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
        let m_hat = m[i] / corr1;
        let v_hat = v[i] / corr2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::core::Rng;

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut net = MlpNet::zeros(&[1, 1]);
        let mut st = AdamState::new(&net, 1e-3);
        let mut grads = NetGrads::zeros_like(&net);
        grads.layers[0].w[0] = 0.37;
        grads.layers[0].b[0] = -2.0;
        adam_step(&mut net, &grads, &mut st).unwrap();
        // bias-corrected first step: update = lr * g / (|g| + eps') ~ lr * sign(g)
        assert!((net.layers()[0].w[0] + 1e-3).abs() < 1e-6);
        assert!((net.layers()[0].b[0] - 1e-3).abs() < 1e-6);
    }

    #[test]
    fn zero_grads_leave_params_unchanged() {
        let mut rng = Rng::new(6);
        let mut net = MlpNet::new(&[2, 4, 1], &mut rng);
        let snapshot = net.clone();
        let mut st = AdamState::new(&net, 1e-2);
        let grads = NetGrads::zeros_like(&net);
        for _ in 0..100 {
            adam_step(&mut net, &grads, &mut st).unwrap();
        }
        for (a, b) in net.layers().iter().zip(snapshot.layers()) {
            assert_eq!(a.w, b.w);
            assert_eq!(a.b, b.b);
        }
    }

    #[test]
    fn scalar_quadratic_converges_to_minimizer() {
        // Minimize 0.5 (b - 3)^2 over the bias of a 1x1 net fed zeros.
        let mut net = MlpNet::zeros(&[1, 1]);
        let mut st = AdamState::new(&net, 1e-2);
        let mut grads = NetGrads::zeros_like(&net);
        let mut steps = 0;
        for _ in 0..10_000 {
            steps += 1;
            let b = net.layers()[0].b[0];
            grads.layers[0].b[0] = b - 3.0;
            adam_step(&mut net, &grads, &mut st).unwrap();
            if (net.layers()[0].b[0] - 3.0).abs() < 1e-6 {
                break;
            }
        }
        let b = net.layers()[0].b[0];
        assert!(
            (b - 3.0).abs() < 1e-6,
            "did not converge: b = {b} after {steps} steps"
        );
    }

    #[test]
    fn non_finite_grads_are_rejected_with_block_name() {
        let mut net = MlpNet::zeros(&[2, 2]);
        let mut st = AdamState::new(&net, 1e-3);
        let mut grads = NetGrads::zeros_like(&net);
        grads.layers[0].w[1] = f64::NAN;
        let err = adam_step(&mut net, &grads, &mut st).unwrap_err();
        match err {
            NnError::NonFiniteGrad { layer: 0, block } => assert_eq!(block, "weights"),
            other => panic!("unexpected error {other:?}"),
        }
    }
}
