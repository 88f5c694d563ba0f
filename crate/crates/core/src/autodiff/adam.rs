use crate::autodiff::{Gradients, ParamStore, Tensor};
use crate::error::{Error, Result};

/// Adam with bias-corrected moment estimates.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl AdamState {
    /// Default moment decay rates and epsilon (0.9, 0.999, 1e-8).
    pub fn new(store: &ParamStore, learning_rate: f64) -> Self {
        let zeros = || store.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
        AdamState {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: zeros(),
            second: zeros(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moments(&self) -> &[Tensor] {
        &self.first
    }

    pub fn second_moments(&self) -> &[Tensor] {
        &self.second
    }

    /// Applies one update to `params` in place.
    pub fn step(&mut self, params: &mut ParamStore, grads: &Gradients) -> Result<()> {
        if params.len() != self.first.len() || grads.tensors().len() != self.first.len() {
            return Err(Error::Shape {
                op: "adam_step",
                detail: "parameter, gradient and moment counts differ".into(),
            });
        }
        for ((p, g), m) in params.tensors().iter().zip(grads.tensors()).zip(&self.first) {
            if p.shape() != g.shape() || p.shape() != m.shape() {
                return Err(Error::Shape {
                    op: "adam_step",
                    detail: format!("parameter {:?} vs gradient {:?}", p.shape(), g.shape()),
                });
            }
        }

        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, eps, lr) = (self.beta1, self.beta2, self.eps, self.learning_rate);

        for (((p, g), m), v) in params
            .tensors_mut()
            .iter_mut()
            .zip(grads.tensors())
            .zip(self.first.iter_mut())
            .zip(self.second.iter_mut())
        {
            for (((pv, gv), mv), vv) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut().iter_mut())
                .zip(v.data_mut().iter_mut())
            {
                *mv = b1 * *mv + (1.0 - b1) * gv;
                *vv = b2 * *vv + (1.0 - b2) * gv * gv;
                let m_hat = *mv / bc1;
                let v_hat = *vv / bc2;
                *pv -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        if params.tensors().iter().any(|t| !t.is_finite()) {
            return Err(Error::NonFinite("adam_step"));
        }
        Ok(())
    }
}
