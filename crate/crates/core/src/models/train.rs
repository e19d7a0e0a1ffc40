use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::features::{segment, FeatureSequence};
use crate::numerics::Tensor;

use super::config::SEGMENT_FRAMES;
use super::model::{Model, StepStats};
use super::{ModelError, Result};

/// Fixed-length training segments with their speaker ids.
#[derive(Clone, Debug, Default)]
pub struct TrainingSet {
    dim: usize,
    segments: Vec<Vec<f32>>,
    speakers: Vec<usize>,
}

impl TrainingSet {
    /// Cuts every utterance into non-overlapping 32-frame segments.
    /// Utterances shorter than one segment contribute nothing.
    pub fn from_sequences<'a>(utts: impl IntoIterator<Item = (&'a FeatureSequence, usize)>) -> Result<Self> {
        let mut set = TrainingSet::default();
        for (feat, spk) in utts {
            if set.dim == 0 {
                set.dim = feat.dim();
            } else if feat.dim() != set.dim {
                return Err(ModelError::Shape(format!(
                    "utterance `{}` has {} dims, others have {}",
                    feat.utterance_id,
                    feat.dim(),
                    set.dim
                )));
            }
            for s in segment(feat, SEGMENT_FRAMES, SEGMENT_FRAMES).segments {
                set.segments.push(s.into_data());
                set.speakers.push(spk);
            }
        }
        if set.segments.is_empty() {
            return Err(ModelError::Shape("no utterance is long enough for one segment".into()));
        }
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn speakers(&self) -> &[usize] {
        &self.speakers
    }

    /// Batch for `step`, drawn with replacement from a generator seeded by
    /// `(seed, step)` alone, so a resumed run sees the same batches.
    pub fn batch(&self, seed: u64, step: u64, batch_size: usize) -> Result<(Tensor, Vec<usize>)> {
        let stream = seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ step.wrapping_add(1).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        let mut rng = ChaCha8Rng::seed_from_u64(stream);
        let mut data = Vec::with_capacity(batch_size * self.dim * SEGMENT_FRAMES);
        let mut ids = Vec::with_capacity(batch_size);
        for _ in 0..batch_size {
            let i = rng.gen_range(0..self.segments.len());
            data.extend_from_slice(&self.segments[i]);
            ids.push(self.speakers[i]);
        }
        Ok((Tensor::new(vec![batch_size, self.dim, SEGMENT_FRAMES], data)?, ids))
    }
}

/// Fraction of (slice, code) pairs selected at least once over the last
/// `window` recorded steps.
#[derive(Clone, Debug)]
pub struct CodebookUsage {
    k: usize,
    window: usize,
    counts: Vec<Vec<u32>>,
    steps: VecDeque<Vec<Vec<usize>>>,
}

impl CodebookUsage {
    pub fn new(n_slices: usize, k: usize, window: usize) -> Self {
        Self {
            k,
            window: window.max(1),
            counts: vec![vec![0; k]; n_slices],
            steps: VecDeque::new(),
        }
    }

    /// Adds one step's `[frames][slice]` indices, dropping the oldest step
    /// once the window is full.
    pub fn record(&mut self, indices: &[Vec<usize>]) {
        for row in indices {
            for (s, &i) in row.iter().enumerate() {
                self.counts[s][i] += 1;
            }
        }
        self.steps.push_back(indices.to_vec());
        if self.steps.len() > self.window {
            let old = self.steps.pop_front().expect("non-empty window");
            for row in old {
                for (s, i) in row.into_iter().enumerate() {
                    self.counts[s][i] -= 1;
                }
            }
        }
    }

    pub fn fraction(&self) -> f64 {
        let used: usize = self.counts.iter().map(|s| s.iter().filter(|&&c| c > 0).count()).sum();
        used as f64 / (self.k * self.counts.len()) as f64
    }

    pub fn steps_recorded(&self) -> usize {
        self.steps.len()
    }

    pub fn reset(&mut self) {
        self.counts.iter_mut().for_each(|c| c.fill(0));
        self.steps.clear();
    }
}

/// Runs `train_step` until the model has taken `until_step` steps, calling
/// `on_step` after each.
pub fn train(
    model: &mut Model,
    data: &TrainingSet,
    until_step: u64,
    mut on_step: impl FnMut(&Model, &StepStats) -> Result<()>,
) -> Result<()> {
    let batch_size = model.config().batch_size;
    while model.step() < until_step {
        let (x, ids) = data.batch(model.seed(), model.step(), batch_size)?;
        let stats = model.train_step(&x, &ids)?;
        on_step(model, &stats)?;
    }
    Ok(())
}
