use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::network::{Gradients, ParamMut};

/// Adam hyperparameters plus the L2 regularization coefficient.
#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub learning_rate: f64,
    /// Added to weight gradients as `l2 * w`; biases are not regularized.
    pub l2: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn new(learning_rate: f64, l2: f64) -> AdamConfig {
        AdamConfig {
            learning_rate,
            l2,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl Default for AdamConfig {
    fn default() -> AdamConfig {
        AdamConfig::new(1e-4, 1e-3)
    }
}

/// Per-parameter first/second moment accumulators plus the step counter.
#[derive(Debug, Clone)]
pub struct OptimizerState<S: Scalar> {
    cfg: AdamConfig,
    step: u64,
    m: Vec<Tensor<S>>,
    v: Vec<Tensor<S>>,
}

impl<S: Scalar> OptimizerState<S> {
    pub fn new(cfg: AdamConfig, param_shapes: &[Vec<usize>]) -> OptimizerState<S> {
        OptimizerState {
            cfg,
            step: 0,
            m: param_shapes.iter().map(|s| Tensor::zeros(s)).collect(),
            v: param_shapes.iter().map(|s| Tensor::zeros(s)).collect(),
        }
    }

    pub fn config(&self) -> &AdamConfig {
        &self.cfg
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One Adam update. Gradients must be aligned with `params`; a non-finite
    /// gradient aborts the run.
    pub fn adam_step(
        &mut self,
        params: &mut [ParamMut<'_, S>],
        grads: &Gradients<S>,
    ) -> Result<()> {
        if params.len() != self.m.len() || grads.tensors.len() != self.m.len() {
            return Err(Error::InvalidArgument(format!(
                "optimizer tracks {} parameters, got {} params / {} grads",
                self.m.len(),
                params.len(),
                grads.tensors.len()
            )));
        }
        self.step += 1;
        let lr = S::from_f64(self.cfg.learning_rate);
        let l2 = S::from_f64(self.cfg.l2);
        let b1 = S::from_f64(self.cfg.beta1);
        let b2 = S::from_f64(self.cfg.beta2);
        let eps = S::from_f64(self.cfg.eps);
        let one = S::one();
        let bc1 = one - S::from_f64(self.cfg.beta1.powi(self.step as i32));
        let bc2 = one - S::from_f64(self.cfg.beta2.powi(self.step as i32));

        for (i, param) in params.iter_mut().enumerate() {
            let grad = &grads.tensors[i];
            if grad.shape() != param.tensor.shape() {
                return Err(Error::ShapeMismatch {
                    context: format!("gradient for {}", param.name),
                    expected: param.tensor.shape().to_vec(),
                    got: grad.shape().to_vec(),
                });
            }
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            let w = param.tensor.data_mut();
            for j in 0..w.len() {
                let mut g = grad.data()[j];
                if param.decay {
                    g = g + l2 * w[j];
                }
                if !g.is_finite() {
                    return Err(Error::NonFinite(format!(
                        "gradient of {} at element {j}",
                        param.name
                    )));
                }
                m[j] = b1 * m[j] + (one - b1) * g;
                v[j] = b2 * v[j] + (one - b2) * g * g;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                w[j] = w[j] - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{classifier_spec, ArchPreset, Network};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scalar_param(value: f64) -> Tensor<f64> {
        Tensor::from_vec(&[1], vec![value]).unwrap()
    }

    #[test]
    fn zero_gradients_and_zero_l2_leave_parameters_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut net: Network<f32> =
            Network::new(classifier_spec(ArchPreset::Arch1, &[8, 8, 1], 3), &mut rng).unwrap();
        let before: Vec<Tensor<f32>> = net.params().iter().map(|p| p.tensor.clone()).collect();
        let mut opt = OptimizerState::new(AdamConfig::new(0.1, 0.0), &net.param_shapes());
        let grads = Gradients::zeros_like(&net.param_shapes());
        opt.adam_step(&mut net.params_mut(), &grads).unwrap();
        for (p, b) in net.params().iter().zip(before.iter()) {
            assert!(p.tensor.bit_eq(b), "{} changed", p.name);
        }
        assert_eq!(opt.step_count(), 1);
    }

    #[test]
    fn first_step_moves_against_gradient_sign() {
        let mut param = scalar_param(2.0);
        let mut opt: OptimizerState<f64> =
            OptimizerState::new(AdamConfig::new(0.01, 0.0), &[vec![1]]);
        let grads = Gradients {
            tensors: vec![scalar_param(0.5)],
        };
        let mut params = vec![ParamMut {
            name: "w".into(),
            tensor: &mut param,
            decay: false,
        }];
        opt.adam_step(&mut params, &grads).unwrap();
        assert!(param.data()[0] < 2.0);
    }

    #[test]
    fn hand_evaluated_first_step() {
        // param 1.0, grad 1.0, lr 0.1, betas 0.9/0.999, eps 1e-8:
        // m=0.1, v=0.001, m_hat=1, v_hat=1 -> param = 1 - 0.1/(1+1e-8) ~ 0.9.
        let mut param = scalar_param(1.0);
        let mut opt: OptimizerState<f64> =
            OptimizerState::new(AdamConfig::new(0.1, 0.0), &[vec![1]]);
        let grads = Gradients {
            tensors: vec![scalar_param(1.0)],
        };
        let mut params = vec![ParamMut {
            name: "w".into(),
            tensor: &mut param,
            decay: true,
        }];
        opt.adam_step(&mut params, &grads).unwrap();
        assert!((param.data()[0] - 0.9).abs() < 1e-6, "{}", param.data()[0]);
    }

    #[test]
    fn l2_applies_to_decayed_parameters_only() {
        let mut weight = scalar_param(2.0);
        let mut bias = scalar_param(2.0);
        let mut opt: OptimizerState<f64> =
            OptimizerState::new(AdamConfig::new(0.1, 0.5), &[vec![1], vec![1]]);
        let grads = Gradients {
            tensors: vec![scalar_param(0.0), scalar_param(0.0)],
        };
        let mut params = vec![
            ParamMut {
                name: "w".into(),
                tensor: &mut weight,
                decay: true,
            },
            ParamMut {
                name: "b".into(),
                tensor: &mut bias,
                decay: false,
            },
        ];
        opt.adam_step(&mut params, &grads).unwrap();
        assert!(weight.data()[0] < 2.0);
        assert_eq!(bias.data()[0], 2.0);
    }

    #[test]
    fn non_finite_gradient_aborts() {
        let mut param = scalar_param(1.0);
        let mut opt: OptimizerState<f64> =
            OptimizerState::new(AdamConfig::new(0.1, 0.0), &[vec![1]]);
        let grads = Gradients {
            tensors: vec![scalar_param(f64::NAN)],
        };
        let mut params = vec![ParamMut {
            name: "w".into(),
            tensor: &mut param,
            decay: false,
        }];
        let err = opt.adam_step(&mut params, &grads).unwrap_err();
        assert!(matches!(err, Error::NonFinite(_)));
    }
}
