use super::{ParamStore, Tensor};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            ..Self::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment estimates for every parameter of one store.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(params: &ParamStore, config: AdamConfig) -> Self {
        let zeros: Vec<Tensor> = params
            .iter()
            .map(|(_, p)| Tensor::zeros(p.value.rows(), p.value.cols()))
            .collect();
        AdamState {
            config,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    fn check_layout(&self, params: &ParamStore) -> Result<()> {
        if self.m.len() != params.len() {
            return Err(Error::InvalidArgument(format!(
                "optimizer tracks {} tensors, store has {}",
                self.m.len(),
                params.len()
            )));
        }
        for ((_, p), m) in params.iter().zip(&self.m) {
            if p.value.shape() != m.shape() {
                return Err(Error::Shape {
                    op: "adam_step",
                    left: p.value.shape(),
                    right: m.shape(),
                });
            }
        }
        Ok(())
    }
}

/// One bias-corrected Adam update from the accumulated gradients, which are
/// zeroed afterwards.
///
/// A step whose gradients are all exactly zero is skipped entirely (moments
/// and step counter untouched), so a zero-signal update never moves the
/// parameters through stale momentum.
pub fn adam_step(params: &mut ParamStore, state: &mut AdamState) -> Result<()> {
    state.check_layout(params)?;
    let mut all_zero = true;
    for (name, p) in params.iter() {
        for &g in p.grad.as_slice() {
            if !g.is_finite() {
                return Err(Error::Poisoned(name.to_string()));
            }
            all_zero &= g == 0.0;
        }
    }
    if all_zero {
        return Ok(());
    }

    state.step += 1;
    let AdamConfig {
        lr,
        beta1,
        beta2,
        eps,
    } = state.config;
    let t = state.step as i32;
    let bc1 = 1.0 - beta1.powi(t);
    let bc2 = 1.0 - beta2.powi(t);

    for (((_, p), m), v) in params.iter_mut().zip(&mut state.m).zip(&mut state.v) {
        let values = p.value.as_mut_slice();
        let grads = p.grad.as_mut_slice();
        let ms = m.as_mut_slice();
        let vs = v.as_mut_slice();
        for i in 0..values.len() {
            let g = grads[i];
            ms[i] = beta1 * ms[i] + (1.0 - beta1) * g;
            vs[i] = beta2 * vs[i] + (1.0 - beta2) * g * g;
            let m_hat = ms[i] / bc1;
            let v_hat = vs[i] / bc2;
            values[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            grads[i] = 0.0;
        }
    }
    Ok(())
}
