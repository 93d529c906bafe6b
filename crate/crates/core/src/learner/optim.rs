use serde::{Deserialize, Serialize};

use super::network::{Grads, Network};
use super::tensor::Real;
use super::LearnerError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    AdamW,
    Sgd,
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// `base · factor^⌊epoch / period⌋` with 0-based epochs.
pub fn step_decay_lr(base: f64, factor: f64, period: usize, epoch: usize) -> f64 {
    if period == 0 {
        return base;
    }
    base * factor.powi((epoch / period) as i32)
}

/// Optimizer with its per-parameter state.
#[derive(Debug, Clone)]
pub enum Optimizer {
    Sgd,
    AdamW {
        weight_decay: f64,
        step: u64,
        m: Vec<f64>,
        v: Vec<f64>,
    },
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, weight_decay: f64, param_count: usize) -> Self {
        match kind {
            OptimizerKind::Sgd => Optimizer::Sgd,
            OptimizerKind::AdamW => Optimizer::AdamW {
                weight_decay,
                step: 0,
                m: vec![0.0; param_count],
                v: vec![0.0; param_count],
            },
        }
    }

    /// Applies one update with learning rate `lr`. Non-finite gradients abort
    /// before any parameter is touched.
    pub fn step<T: Real>(&mut self, net: &mut Network<T>, grads: &Grads<T>, lr: f64) -> Result<(), LearnerError> {
        for (layer, (gw, gb)) in grads.weight.iter().zip(&grads.bias).enumerate() {
            if let Some(pos) = gw.iter().chain(gb).position(|g| !g.is_finite()) {
                return Err(LearnerError::NonFiniteGradient { layer, index: pos });
            }
        }
        match self {
            Optimizer::Sgd => {
                let lr = T::of(lr);
                for (l, (gw, gb)) in net.layers.iter_mut().zip(grads.weight.iter().zip(&grads.bias)) {
                    for (p, &g) in l.weight.iter_mut().chain(l.bias.iter_mut()).zip(gw.iter().chain(gb)) {
                        *p = *p - lr * g;
                    }
                }
            }
            Optimizer::AdamW { weight_decay, step, m, v } => {
                *step += 1;
                let t = *step as i32;
                let bc1 = 1.0 - ADAM_BETA1.powi(t);
                let bc2 = 1.0 - ADAM_BETA2.powi(t);
                let mut k = 0;
                for (l, (gw, gb)) in net.layers.iter_mut().zip(grads.weight.iter().zip(&grads.bias)) {
                    for (p, &g) in l.weight.iter_mut().chain(l.bias.iter_mut()).zip(gw.iter().chain(gb)) {
                        let g = g.f64();
                        m[k] = ADAM_BETA1 * m[k] + (1.0 - ADAM_BETA1) * g;
                        v[k] = ADAM_BETA2 * v[k] + (1.0 - ADAM_BETA2) * g * g;
                        let m_hat = m[k] / bc1;
                        let v_hat = v[k] / bc2;
                        let mut x = p.f64();
                        x -= lr * *weight_decay * x;
                        x -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
                        *p = T::of(x);
                        k += 1;
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learner::layers::{Layer, LayerSpec};
    use crate::learner::network::ModelKind;

    fn scalar_net(p: f64) -> Network<f64> {
        let mut l = Layer::zeros(LayerSpec::Linear { inputs: 1, outputs: 2 });
        l.weight = vec![p, 0.0];
        Network {
            kind: ModelKind::ContextNet,
            input_shape: vec![1],
            layers: vec![l],
        }
    }

    fn grads(g: f64) -> Grads<f64> {
        Grads {
            weight: vec![vec![g, 0.0]],
            bias: vec![vec![0.0, 0.0]],
        }
    }

    #[test]
    fn sgd_step() {
        let mut net = scalar_net(1.0);
        Optimizer::new(OptimizerKind::Sgd, 0.0, 4).step(&mut net, &grads(0.5), 0.01).unwrap();
        assert!((net.layers[0].weight[0] - 0.995).abs() < 1e-15);
    }

    #[test]
    fn adamw_first_step_moves_by_lr() {
        let mut net = scalar_net(1.0);
        let mut opt = Optimizer::new(OptimizerKind::AdamW, 0.0, 4);
        opt.step(&mut net, &grads(0.3), 1e-3).unwrap();
        // m̂ = g, v̂ = g², so the step is lr · g / (|g| + ε).
        let expected = 1.0 - 1e-3 * 0.3 / (0.3 + ADAM_EPS);
        assert!((net.layers[0].weight[0] - expected).abs() < 1e-15);
        for _ in 0..5 {
            let before = net.layers[0].weight[0];
            opt.step(&mut net, &grads(0.3), 1e-3).unwrap();
            assert!(((before - net.layers[0].weight[0]) - 1e-3).abs() < 1e-9);
        }
    }

    #[test]
    fn adamw_decay_is_decoupled() {
        let mut net = scalar_net(2.0);
        let mut opt = Optimizer::new(OptimizerKind::AdamW, 0.01, 4);
        opt.step(&mut net, &grads(0.0), 0.1).unwrap();
        assert!((net.layers[0].weight[0] - 2.0 * (1.0 - 0.1 * 0.01)).abs() < 1e-15);
    }

    #[test]
    fn lr_schedule() {
        assert_eq!(step_decay_lr(1e-4, 0.95, 10, 9), 1e-4);
        assert!((step_decay_lr(1e-4, 0.95, 10, 25) - 1e-4 * 0.95 * 0.95).abs() < 1e-20);
    }

    #[test]
    fn non_finite_gradient_rejected() {
        let mut net = scalar_net(1.0);
        let err = Optimizer::new(OptimizerKind::Sgd, 0.0, 4)
            .step(&mut net, &grads(f64::NAN), 0.1)
            .unwrap_err();
        assert!(matches!(err, LearnerError::NonFiniteGradient { layer: 0, index: 0 }));
        assert_eq!(net.layers[0].weight[0], 1.0);
    }
}
