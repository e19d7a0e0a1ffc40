use serde::{Deserialize, Serialize};

use super::{NumericsError, ParamSet, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 4e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Moment estimates for every tensor of a [`ParamSet`], in the same order.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step_count: u64,
    pub first_moment: Vec<Vec<f32>>,
    pub second_moment: Vec<Vec<f32>>,
}

impl AdamState {
    pub fn new(config: AdamConfig, params: &ParamSet) -> Self {
        let zeros: Vec<Vec<f32>> = params.tensors().iter().map(|t| vec![0.0; t.numel()]).collect();
        Self {
            config,
            step_count: 0,
            first_moment: zeros.clone(),
            second_moment: zeros,
        }
    }
}

/// One bias-corrected Adam update using the gradients stored on `params`.
pub fn adam_step(params: &mut ParamSet, state: &mut AdamState) -> Result<()> {
    if state.first_moment.len() != params.len() || state.second_moment.len() != params.len() {
        return Err(NumericsError::InvalidArgument {
            op: "adam_step",
            reason: format!(
                "optimizer tracks {} tensors, parameter set has {}",
                state.first_moment.len(),
                params.len()
            ),
        });
    }
    for ((name, t), m) in params.iter().zip(&state.first_moment) {
        if t.grad().is_none() {
            return Err(NumericsError::MissingGrad(name.to_string()));
        }
        if m.len() != t.numel() {
            return Err(NumericsError::ShapeMismatch {
                op: "adam_step",
                left: t.shape().to_vec(),
                right: vec![m.len()],
            });
        }
    }

    let cfg = state.config;
    let t = (state.step_count + 1) as i32;
    let bias1 = 1.0 - cfg.beta1.powi(t);
    let bias2 = 1.0 - cfg.beta2.powi(t);
    for ((tensor, m), v) in params
        .tensors_mut()
        .iter_mut()
        .zip(&mut state.first_moment)
        .zip(&mut state.second_moment)
    {
        let grad = tensor.grad().expect("checked above").to_vec();
        for (((p, g), m), v) in tensor.data_mut().iter_mut().zip(grad).zip(m.iter_mut()).zip(v.iter_mut()) {
            let g = g as f64;
            let m_new = cfg.beta1 * *m as f64 + (1.0 - cfg.beta1) * g;
            let v_new = cfg.beta2 * *v as f64 + (1.0 - cfg.beta2) * g * g;
            *m = m_new as f32;
            *v = v_new as f32;
            let step = cfg.learning_rate * (m_new / bias1) / ((v_new / bias2).sqrt() + cfg.epsilon);
            *p = (*p as f64 - step) as f32;
        }
    }
    state.step_count += 1;
    Ok(())
}
