//! Adam optimizer with bias correction.

use super::layer::{Dense, DenseGrad};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPS: f64 = 1e-8;

/// First/second moment estimates, one entry per layer.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<DenseGrad>,
    v: Vec<DenseGrad>,
    pub step: u64,
}

impl AdamState {
    pub fn new(layers: &[&Dense]) -> Self {
        let zeros: Vec<DenseGrad> = layers.iter().map(|l| l.grad_zeros()).collect();
        AdamState { m: zeros.clone(), v: zeros, step: 0 }
    }

    /// One update over all layers. Panics on shape mismatch, which would
    /// mean the state was built for a different network.
    pub fn step(&mut self, params: &mut [&mut Dense], grads: &[DenseGrad], lr: f64) {
        assert_eq!(params.len(), grads.len());
        assert_eq!(params.len(), self.m.len());
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - BETA1.powi(t);
        let bc2 = 1.0 - BETA2.powi(t);
        for ((layer, grad), (m, v)) in params
            .iter_mut()
            .zip(grads.iter())
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for ((p, g), (m, v)) in layer
                .w
                .iter_mut()
                .zip(grad.w.iter())
                .zip(m.w.iter_mut().zip(v.w.iter_mut()))
            {
                *m = BETA1 * *m + (1.0 - BETA1) * g;
                *v = BETA2 * *v + (1.0 - BETA2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *p -= lr * m_hat / (v_hat.sqrt() + EPS);
            }
            for ((p, g), (m, v)) in layer
                .b
                .iter_mut()
                .zip(grad.b.iter())
                .zip(m.b.iter_mut().zip(v.b.iter_mut()))
            {
                *m = BETA1 * *m + (1.0 - BETA1) * g;
                *v = BETA2 * *v + (1.0 - BETA2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *p -= lr * m_hat / (v_hat.sqrt() + EPS);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::layer::Activation;
    use crate::rng::stream_rng;

    fn small_layer() -> Dense {
        let mut rng = stream_rng(2, "adam-test", 0);
        Dense::init(3, 4, Activation::Identity, &mut rng)
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut layer = small_layer();
        let before = layer.clone();
        let zero = layer.grad_zeros();
        let mut state = AdamState::new(&[&layer]);
        state.step(&mut [&mut layer], &[zero], 1e-3);
        assert_eq!(layer, before);
        assert_eq!(state.step, 1);
    }

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        // With bias correction, the first update is
        // lr * g / (|g| + eps') which is lr * sign(g) up to eps.
        let mut layer = small_layer();
        let before = layer.clone();
        let mut grad = layer.grad_zeros();
        grad.w[(0, 0)] = 0.37;
        grad.w[(1, 2)] = -4.2;
        grad.b[2] = 1e-3;
        let lr = 1e-4;
        let mut state = AdamState::new(&[&layer]);
        state.step(&mut [&mut layer], &[grad.clone()], lr);
        for (idx, g) in [((0usize, 0usize), 0.37f64), ((1, 2), -4.2)] {
            let delta = layer.w[idx] - before.w[idx];
            assert!((delta + lr * g.signum()).abs() < 1e-9, "delta {delta}");
        }
        let delta_b = layer.b[2] - before.b[2];
        assert!((delta_b + lr).abs() < 1e-8);
        // Untouched entries stay put.
        assert_eq!(layer.w[(2, 3)], before.w[(2, 3)]);
    }

    #[test]
    fn identical_state_and_inputs_give_identical_results() {
        let run = || {
            let mut layer = small_layer();
            let mut grad = layer.grad_zeros();
            grad.w.fill(0.01);
            grad.b.fill(-0.02);
            let mut state = AdamState::new(&[&layer]);
            for _ in 0..5 {
                state.step(&mut [&mut layer], &[grad.clone()], 1e-3);
            }
            layer
        };
        assert_eq!(run(), run());
    }
}
