use serde::{Deserialize, Serialize};

use super::Matrix;
use crate::error::{Error, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Moment estimates for one parameter tensor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(len: usize, lr: f64) -> Self {
        AdamState {
            step: 0,
            m: vec![0.0; len],
            v: vec![0.0; len],
            lr,
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            eps: ADAM_EPS,
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    /// One bias-corrected Adam update of `params` in place.
    ///
    /// A gradient tensor that is identically zero leaves `params` untouched
    /// (moments still decay and the step still advances), so tensors that a
    /// batch does not influence never drift on stale momentum.
    pub fn update(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.m.len() {
            return Err(Error::contract(format!(
                "adam: params {} / grads {} / state {}",
                params.len(),
                grads.len(),
                self.m.len()
            )));
        }
        if !(self.lr > 0.0) {
            return Err(Error::contract("adam: learning rate must be positive"));
        }
        self.step += 1;
        if grads.iter().all(|&g| g == 0.0) {
            self.m.iter_mut().for_each(|m| *m *= self.beta1);
            self.v.iter_mut().for_each(|v| *v *= self.beta2);
            return Ok(());
        }
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for ((p, &g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

/// Pure form of [`AdamState::update`]: returns the new parameters and state.
pub fn adam_step(
    params: &Matrix,
    grads: &Matrix,
    state: &AdamState,
) -> Result<(Matrix, AdamState)> {
    if params.shape() != grads.shape() {
        return Err(Error::contract(format!(
            "adam: params {:?} vs grads {:?}",
            params.shape(),
            grads.shape()
        )));
    }
    let mut p = params.clone();
    let mut s = state.clone();
    s.update(p.as_mut_slice(), grads.as_slice())?;
    Ok((p, s))
}
