use serde::{Deserialize, Serialize};

use super::{EvalError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub l2: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            epochs: 300,
            learning_rate: 0.5,
            l2: 1e-4,
        }
    }
}

/// Multinomial logistic regression on standardized frames, fitted by
/// full-batch gradient descent.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearProbe {
    dim: usize,
    n_classes: usize,
    mean: Vec<f64>,
    scale: Vec<f64>,
    /// `[n_classes × (dim + 1)]`, bias last.
    weights: Vec<f64>,
}

fn check(frames: &[f32], dim: usize, labels: &[usize], n_classes: usize) -> Result<usize> {
    if dim == 0 || frames.len() % dim != 0 || frames.len() / dim != labels.len() || labels.is_empty() {
        return Err(EvalError::Invalid(format!(
            "{} values and {} labels do not form {dim}-dim labelled frames",
            frames.len(),
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
        return Err(EvalError::Invalid(format!("label {bad} outside [0, {n_classes})")));
    }
    Ok(labels.len())
}

impl LinearProbe {
    pub fn fit(frames: &[f32], dim: usize, labels: &[usize], n_classes: usize, cfg: &ProbeConfig) -> Result<Self> {
        let n = check(frames, dim, labels, n_classes)?;
        if n_classes < 2 {
            return Err(EvalError::Invalid("a probe needs at least two classes".into()));
        }
        let mut mean = vec![0.0; dim];
        for row in frames.chunks(dim) {
            for (m, &v) in mean.iter_mut().zip(row) {
                *m += v as f64;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; dim];
        for row in frames.chunks(dim) {
            for ((s, &v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v as f64 - m).powi(2);
            }
        }
        let scale: Vec<f64> = var.iter().map(|s| 1.0 / (s / n as f64).sqrt().max(1e-8)).collect();
        let mut probe = Self {
            dim,
            n_classes,
            mean,
            scale,
            weights: vec![0.0; n_classes * (dim + 1)],
        };
        let x: Vec<f64> = frames
            .chunks(dim)
            .flat_map(|row| probe.standardize(row).collect::<Vec<_>>())
            .collect();
        let w = dim + 1;
        let mut grad = vec![0.0; probe.weights.len()];
        let mut p = vec![0.0; n_classes];
        for _ in 0..cfg.epochs {
            grad.fill(0.0);
            for (row, &y) in x.chunks(dim).zip(labels) {
                probe.softmax(row, &mut p);
                for c in 0..n_classes {
                    let e = p[c] - (c == y) as u8 as f64;
                    let g = &mut grad[c * w..(c + 1) * w];
                    for (gi, &xi) in g.iter_mut().zip(row) {
                        *gi += e * xi;
                    }
                    g[dim] += e;
                }
            }
            for (i, (wt, g)) in probe.weights.iter_mut().zip(&grad).enumerate() {
                let decay = if i % w == dim { 0.0 } else { cfg.l2 * *wt };
                *wt -= cfg.learning_rate * (g / n as f64 + decay);
            }
        }
        Ok(probe)
    }

    fn standardize<'a>(&'a self, row: &'a [f32]) -> impl Iterator<Item = f64> + 'a {
        row.iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((&v, m), s)| (v as f64 - m) * s)
    }

    fn softmax(&self, x: &[f64], out: &mut [f64]) {
        let w = self.dim + 1;
        for (c, o) in out.iter_mut().enumerate() {
            let wc = &self.weights[c * w..(c + 1) * w];
            *o = wc[..self.dim].iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + wc[self.dim];
        }
        let max = out.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for o in out.iter_mut() {
            *o = (*o - max).exp();
            z += *o;
        }
        out.iter_mut().for_each(|o| *o /= z);
    }

    /// Most probable class per frame; ties go to the lower class.
    pub fn predict(&self, frames: &[f32]) -> Result<Vec<usize>> {
        if frames.len() % self.dim != 0 {
            return Err(EvalError::Invalid(format!("{} values are not {}-dim frames", frames.len(), self.dim)));
        }
        let mut p = vec![0.0; self.n_classes];
        Ok(frames
            .chunks(self.dim)
            .map(|row| {
                let x: Vec<f64> = self.standardize(row).collect();
                self.softmax(&x, &mut p);
                (0..self.n_classes).fold(0, |best, c| if p[c] > p[best] { c } else { best })
            })
            .collect())
    }

    pub fn accuracy(&self, frames: &[f32], labels: &[usize]) -> Result<f64> {
        check(frames, self.dim, labels, self.n_classes)?;
        let pred = self.predict(frames)?;
        let hits = pred.iter().zip(labels).filter(|(a, b)| a == b).count();
        Ok(hits as f64 / labels.len() as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separates_shifted_clusters() {
        let mut frames = Vec::new();
        let mut labels = Vec::new();
        for i in 0..60 {
            let c = i % 3;
            let jitter = (i as f32 * 0.37).sin() * 0.3;
            frames.extend([c as f32 * 2.0 + jitter, 1.0 - jitter, 5.0]);
            labels.push(c);
        }
        let p = LinearProbe::fit(&frames, 3, &labels, 3, &ProbeConfig::default()).unwrap();
        assert_eq!(p.accuracy(&frames, &labels).unwrap(), 1.0);
        assert!(LinearProbe::fit(&frames, 3, &labels, 2, &ProbeConfig::default()).is_err());
    }
}
