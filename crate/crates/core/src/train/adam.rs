use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nets::ParameterStore;
use pano_autodiff::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.0,
            beta2: 0.9,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0;
        if !ok {
            return Err(Error::Config(format!("invalid optimizer settings {self:?}")));
        }
        Ok(())
    }
}

/// First and second moment estimates, one pair per parameter.
#[derive(Debug, Clone, Default)]
pub struct OptimizerState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: u64,
}

impl OptimizerState {
    pub fn new(params: &ParameterStore) -> Self {
        let zeros = |t: &Tensor| vec![0.0; t.numel()];
        Self {
            m: params.tensors().into_iter().map(zeros).collect(),
            v: params.tensors().into_iter().map(zeros).collect(),
            step: 0,
        }
    }
}

/// One bias-corrected adaptive-moment update. Parameters are left untouched
/// when any gradient is non-finite.
pub fn adam_step(params: &mut ParameterStore, grads: &[Tensor], state: &mut OptimizerState, cfg: &AdamConfig) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(Error::Dimension(format!(
            "{} parameters, {} gradients, {} moment slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    let t = state.step + 1;
    for (i, g) in grads.iter().enumerate() {
        if g.numel() != params.get(i).numel() || state.m[i].len() != g.numel() {
            return Err(Error::Dimension(format!(
                "gradient for {} has {} values, parameter has {}",
                params.name(i),
                g.numel(),
                params.get(i).numel()
            )));
        }
        if g.data().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                step: t,
                what: format!("gradient of parameter {}", params.name(i)),
            });
        }
    }
    let bc1 = 1.0 - cfg.beta1.powi(t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(t as i32);
    for (i, g) in grads.iter().enumerate() {
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        let updated: Vec<f64> = params
            .get(i)
            .data()
            .iter()
            .zip(g.data())
            .enumerate()
            .map(|(j, (&p, &gj))| {
                m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * gj;
                v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * gj * gj;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                p - cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps)
            })
            .collect();
        params.set_values(i, updated)?;
    }
    state.step = t;
    Ok(())
}
