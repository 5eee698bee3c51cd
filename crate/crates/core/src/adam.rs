use crate::error::{Error, Result};
use crate::nn::Params;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    /// The settings used for the adversarial-robustness experiments.
    pub fn robustness() -> Self {
        Self {
            learning_rate: 2e-4,
            epsilon: 1e-4,
            ..Self::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl AdamState {
    pub fn new(params: &Params, config: AdamConfig) -> Self {
        let zeros: Vec<Tensor> = params.tensors().map(|t| Tensor::zeros(t.shape())).collect();
        Self {
            config,
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    /// One bias-corrected Adam update. `grads` follow [`Params::tensors`] order.
    pub fn step(&mut self, params: &mut Params, grads: &[Tensor]) -> Result<()> {
        let n = params.tensors().count();
        if grads.len() != n || self.first.len() != n {
            return Err(Error::ShapeMismatch {
                op: "adam_step",
                lhs: vec![n],
                rhs: vec![grads.len()],
            });
        }
        for (p, g) in params.tensors().zip(grads) {
            if p.shape() != g.shape() {
                return Err(Error::ShapeMismatch {
                    op: "adam_step",
                    lhs: p.shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
        }
        self.step += 1;
        let AdamConfig {
            learning_rate: lr,
            beta1: b1,
            beta2: b2,
            epsilon: eps,
        } = self.config;
        let c1 = 1.0 - b1.powi(self.step as i32);
        let c2 = 1.0 - b2.powi(self.step as i32);
        for (((p, g), m), v) in params
            .tensors_mut()
            .zip(grads)
            .zip(self.first.iter_mut())
            .zip(self.second.iter_mut())
        {
            let (p, m, v) = (p.data_mut(), m.data_mut(), v.data_mut());
            for (i, &gi) in g.data().iter().enumerate() {
                m[i] = b1 * m[i] + (1.0 - b1) * gi;
                v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Functional form: returns the updated parameters and state.
pub fn adam_step(params: &Params, grads: &[Tensor], state: &AdamState) -> Result<(Params, AdamState)> {
    let mut p = params.clone();
    let mut s = state.clone();
    s.step(&mut p, grads)?;
    Ok((p, s))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{init_params, Layer, LayerSpec};

    fn scalar_params(w: f64) -> Params {
        Params::from_layers(
            LayerSpec::new(vec![1, 1]).unwrap(),
            vec![Layer {
                weight: Tensor::matrix(1, 1, vec![w]).unwrap(),
                bias: Tensor::zeros(&[1]),
            }],
        )
        .unwrap()
    }

    #[test]
    fn zero_grads_leave_params_unchanged() {
        let p = init_params(&LayerSpec::new(vec![3, 4, 2]).unwrap(), 0);
        let state = AdamState::new(&p, AdamConfig::default());
        let grads: Vec<Tensor> = p.tensors().map(|t| Tensor::zeros(t.shape())).collect();
        let (q, s) = adam_step(&p, &grads, &state).unwrap();
        assert_eq!(p, q);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn first_step_magnitude_is_learning_rate() {
        let p = scalar_params(0.5);
        let cfg = AdamConfig {
            learning_rate: 0.01,
            ..AdamConfig::default()
        };
        let state = AdamState::new(&p, cfg);
        let grads = vec![Tensor::matrix(1, 1, vec![1.0]).unwrap(), Tensor::zeros(&[1])];
        let (q, _) = adam_step(&p, &grads, &state).unwrap();
        let delta = q.layers()[0].weight.data()[0] - 0.5;
        assert!((delta + 0.01).abs() < 1e-8, "delta {delta}");
    }

    #[test]
    fn deterministic_and_scale_aware() {
        let p = init_params(&LayerSpec::new(vec![3, 2]).unwrap(), 1);
        let state = AdamState::new(&p, AdamConfig::default());
        let g: Vec<Tensor> = p.tensors().map(|t| t.map(|v| v - 0.1)).collect();
        let g10: Vec<Tensor> = g.iter().map(|t| t.map(|v| 10.0 * v)).collect();
        let a = adam_step(&p, &g, &state).unwrap();
        let b = adam_step(&p, &g, &state).unwrap();
        assert_eq!(a, b);
        let c = adam_step(&p, &g10, &state).unwrap();
        for ((p0, pa), pc) in p.flatten().iter().zip(a.0.flatten()).zip(c.0.flatten()) {
            assert_eq!((pa - p0).signum(), (pc - p0).signum());
        }
    }

    #[test]
    fn shape_mismatch() {
        let p = scalar_params(0.0);
        let state = AdamState::new(&p, AdamConfig::default());
        assert!(adam_step(&p, &[Tensor::zeros(&[2, 2]), Tensor::zeros(&[1])], &state).is_err());
        assert!(adam_step(&p, &[Tensor::zeros(&[1, 1])], &state).is_err());
    }
}
