//! Adam optimizer with bias correction.

use crate::engine::net::{DenseNet, NetGrads};
use crate::error::{Result, SanError};

/// Per-network Adam moment buffers. Shaped exactly like the flattened
/// parameter vector of the net it was created for.
#[derive(Debug, Clone)]
pub struct AdamState {
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
    step_count: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(net: &DenseNet) -> Self {
        Self::with_hyperparams(net, 0.9, 0.999, 1e-8)
    }

    pub fn with_hyperparams(net: &DenseNet, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        let n = net.param_len();
        AdamState {
            first_moment: vec![0.0; n],
            second_moment: vec![0.0; n],
            step_count: 0,
            beta1,
            beta2,
            epsilon,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }
}

/// One bias-corrected Adam update. Non-finite gradients abort the step.
pub fn adam_step(state: &mut AdamState, net: &mut DenseNet, grads: &NetGrads, learning_rate: f64) -> Result<()> {
    if learning_rate <= 0.0 || !learning_rate.is_finite() {
        return Err(SanError::InvalidConfig(format!(
            "learning rate must be positive and finite, got {learning_rate}"
        )));
    }
    let g = grads.to_vec();
    if g.len() != state.first_moment.len() {
        return Err(SanError::shape(
            "adam_step",
            format!("{} grads", state.first_moment.len()),
            format!("{}", g.len()),
        ));
    }
    if let Some(bad) = g.iter().find(|v| !v.is_finite()) {
        return Err(SanError::Numeric(format!(
            "non-finite gradient {bad} passed to adam_step; step aborted"
        )));
    }

    state.step_count += 1;
    let t = state.step_count as i32;
    let bias1 = 1.0 - state.beta1.powi(t);
    let bias2 = 1.0 - state.beta2.powi(t);
    let (b1, b2, eps) = (state.beta1, state.beta2, state.epsilon);
    let (m, v) = (&mut state.first_moment, &mut state.second_moment);
    net.visit_params_mut(|i, p| {
        let gi = g[i];
        m[i] = b1 * m[i] + (1.0 - b1) * gi;
        v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
        let m_hat = m[i] / bias1;
        let v_hat = v[i] / bias2;
        *p -= learning_rate * m_hat / (v_hat.sqrt() + eps);
    });
    net.validate_finite("adam_step result")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::matrix::Matrix;
    use crate::engine::net::{Activation, DenseLayer, LayerGrads};

    fn scalar_net(w: f64) -> DenseNet {
        DenseNet::from_layers(vec![DenseLayer {
            weight: Matrix::from_vec(1, 1, vec![w]).unwrap(),
            bias: vec![0.0],
            activation: Activation::Identity,
        }])
        .unwrap()
    }

    fn scalar_grads(gw: f64, gb: f64) -> NetGrads {
        NetGrads {
            layers: vec![LayerGrads {
                weight: Matrix::from_vec(1, 1, vec![gw]).unwrap(),
                bias: vec![gb],
            }],
        }
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // Hand evaluation at t=1: m_hat = g, v_hat = g^2, so the update is
        // lr * g / (|g| + eps) ~= lr for g=1.
        let mut net = scalar_net(1.0);
        let mut state = AdamState::new(&net);
        adam_step(&mut state, &mut net, &scalar_grads(1.0, 0.0), 0.01).unwrap();
        let w = net.params_to_vec()[0];
        let expected = 1.0 - 0.01 * (1.0 / (1.0 + 1e-8));
        assert!((w - expected).abs() < 1e-15, "w = {w}, expected {expected}");
        assert_eq!(state.step_count(), 1);
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut net = scalar_net(0.75);
        let mut state = AdamState::new(&net);
        adam_step(&mut state, &mut net, &scalar_grads(0.0, 0.0), 0.1).unwrap();
        assert_eq!(net.params_to_vec(), vec![0.75, 0.0]);
        assert_eq!(state.step_count(), 1);
    }

    #[test]
    fn non_finite_gradient_aborts_step() {
        let mut net = scalar_net(1.0);
        let mut state = AdamState::new(&net);
        let err = adam_step(&mut state, &mut net, &scalar_grads(f64::NAN, 0.0), 0.1);
        assert!(matches!(err, Err(SanError::Numeric(_))));
        assert_eq!(net.params_to_vec(), vec![1.0, 0.0]);
        assert_eq!(state.step_count(), 0);
    }

    #[test]
    fn trajectories_are_deterministic() {
        let run = || {
            let mut net = scalar_net(0.3);
            let mut state = AdamState::new(&net);
            for k in 0..50 {
                let g = (k as f64 * 0.37).sin();
                adam_step(&mut state, &mut net, &scalar_grads(g, -g), 0.005).unwrap();
            }
            net.params_to_vec()
        };
        let a = run();
        let b = run();
        assert_eq!(a, b);
        assert!(a.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn rejects_bad_learning_rate() {
        let mut net = scalar_net(1.0);
        let mut state = AdamState::new(&net);
        assert!(matches!(
            adam_step(&mut state, &mut net, &scalar_grads(1.0, 0.0), 0.0),
            Err(SanError::InvalidConfig(_))
        ));
    }
}
