use serde::{Deserialize, Serialize};

use crate::numerics::{Element, Tape, Tensor, Var};

use super::{BottleneckError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InConfig {
    pub epsilon: f64,
    /// Pool statistics over time only, one set per batch element, instead of
    /// over batch and time together.
    pub per_instance_stats: bool,
}

impl Default for InConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-5,
            per_instance_stats: false,
        }
    }
}

impl InConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(BottleneckError::Config(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

/// Channel mean and population variance of `m: [B, C, T]`, pooled over
/// batch and time.
pub fn channel_stats<T: Element>(m: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
    let shape = m.shape();
    if shape.len() != 3 {
        return Err(BottleneckError::Config(format!(
            "channel_stats expects [B, C, T], got {shape:?}"
        )));
    }
    let (b, c, t) = (shape[0], shape[1], shape[2]);
    let count = (b * t) as f64;
    let mut mean = vec![0.0f64; c];
    let mut var = vec![0.0f64; c];
    for (i, v) in m.data().iter().enumerate() {
        mean[(i / t) % c] += v.f64();
    }
    mean.iter_mut().for_each(|s| *s /= count);
    for (i, v) in m.data().iter().enumerate() {
        let ch = (i / t) % c;
        var[ch] += (v.f64() - mean[ch]).powi(2);
    }
    var.iter_mut().for_each(|s| *s /= count);
    Ok((
        Tensor::from_f64(vec![c], &mean)?,
        Tensor::from_f64(vec![c], &var)?,
    ))
}

/// `(m − μ_c) / sqrt(σ_c² + ε)`, differentiable through the statistics.
/// `epsilon` may be zero here for exact evaluation; [`InConfig::validate`]
/// guards configured models.
pub fn instance_norm<T: Element>(tape: &mut Tape<T>, m: Var, cfg: &InConfig) -> Result<Var> {
    Ok(tape.instance_norm(m, cfg.epsilon, cfg.per_instance_stats)?)
}

/// Linear maps from the speaker code to per-channel scale and shift. The
/// scale map's output goes through `exp`.
#[derive(Clone, Copy, Debug)]
pub struct AdainParams {
    pub scale_w: Var,
    pub scale_b: Var,
    pub shift_w: Var,
    pub shift_b: Var,
}

/// `exp(W_σ z_s + b_σ) · o_in + (W_μ z_s + b_μ)`, broadcast over time.
pub fn adain<T: Element>(tape: &mut Tape<T>, o_in: Var, z_s: Var, params: &AdainParams) -> Result<Var> {
    let channels = tape.shape(o_in).get(1).copied().unwrap_or(0);
    for w in [params.scale_w, params.shift_w] {
        let rows = tape.shape(w)[0];
        if rows != channels {
            return Err(BottleneckError::Dimension {
                expected: channels,
                got: rows,
            });
        }
    }
    let log_scale = tape.linear(z_s, params.scale_w, params.scale_b)?;
    let scale = tape.exp(log_scale)?;
    let shift = tape.linear(z_s, params.shift_w, params.shift_b)?;
    Ok(tape.channel_affine(o_in, scale, shift)?)
}
