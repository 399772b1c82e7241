use super::params::{ParamGrads, ParamStore};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam moment buffers for one [`ParamStore`].
#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    step: u64,
}

impl AdamState {
    pub fn new(params: &ParamStore, config: AdamConfig) -> Self {
        let zeros = |t: &Tensor| Tensor::zeros(t.shape());
        Self {
            config,
            m: params.tensors().iter().map(zeros).collect(),
            v: params.tensors().iter().map(zeros).collect(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One bias-corrected descent step `params -= lr * m_hat / (sqrt(v_hat) + eps)`.
    ///
    /// Gradients are checked before anything is touched, so on error the
    /// parameters and moments are unchanged.
    pub fn step(&mut self, params: &mut ParamStore, grads: &ParamGrads) -> Result<()> {
        assert_eq!(params.len(), grads.len(), "gradient count mismatch");
        for (id, g) in grads.iter() {
            assert_eq!(
                g.shape(),
                params.get(id).shape(),
                "gradient shape mismatch for {}",
                params.name(id)
            );
            if let Some(pos) = g.data().iter().position(|x| !x.is_finite()) {
                return Err(Error::Divergence(format!(
                    "non-finite gradient in parameter '{}' at index {pos}",
                    params.name(id)
                )));
            }
        }
        self.step += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            eps,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (id, g) in grads.iter() {
            let m = self.m[id.0].data_mut();
            let v = self.v[id.0].data_mut();
            let p = params.get_mut(id).data_mut();
            for i in 0..p.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g.data()[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g.data()[i] * g.data()[i];
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                p[i] -= learning_rate * mh / (vh.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(x: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("x", Tensor::scalar(x));
        s
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = scalar_store(1.5);
        let mut adam = AdamState::new(&p, AdamConfig::default());
        let g = p.zeros_like();
        adam.step(&mut p, &g).unwrap();
        assert_eq!(p.tensors()[0].data()[0], 1.5);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = scalar_store(0.0);
        let mut adam = AdamState::new(&p, AdamConfig::default());
        let mut g = p.zeros_like();
        g.get_mut(crate::numerics::ParamId(0)).data_mut()[0] = 3.7;
        adam.step(&mut p, &g).unwrap();
        let x = p.tensors()[0].data()[0];
        assert!((x + 1e-3).abs() < 1e-9, "x = {x}");
    }

    #[test]
    fn quadratic_descent() {
        let mut p = scalar_store(1.0);
        let mut adam = AdamState::new(
            &p,
            AdamConfig {
                learning_rate: 0.01,
                ..Default::default()
            },
        );
        for _ in 0..200 {
            let x = p.tensors()[0].data()[0];
            let mut g = p.zeros_like();
            g.get_mut(crate::numerics::ParamId(0)).data_mut()[0] = 2.0 * x;
            adam.step(&mut p, &g).unwrap();
        }
        assert!(p.tensors()[0].data()[0].abs() < 0.05);
    }

    #[test]
    fn nan_gradient_names_parameter() {
        let mut p = scalar_store(1.0);
        let mut adam = AdamState::new(&p, AdamConfig::default());
        let mut g = p.zeros_like();
        g.get_mut(crate::numerics::ParamId(0)).data_mut()[0] = f64::NAN;
        let err = adam.step(&mut p, &g).unwrap_err();
        assert!(err.to_string().contains("'x'"));
        assert_eq!(p.tensors()[0].data()[0], 1.0);
    }
}
