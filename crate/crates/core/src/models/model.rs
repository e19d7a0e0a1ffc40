use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bottlenecks::{Codebook, CodeSequence, SlicedCodebook};
use crate::features::FeatureSequence;
use crate::numerics::{
    adam_step, finite_difference_check, AdamState, Element, GradCheckReport, ParamSet, Tape, Tensor,
};

use super::config::{ModelConfig, Variant, FEATURE_RATE_HZ, SEGMENT_FRAMES};
use super::network::{self, Assign, Bound, Layer};
use super::{ModelError, Result};

const CODEBOOK_INIT_STREAM: u64 = 0x5eed_c0de_b00c;

/// Losses and assignments from one optimizer step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepStats {
    /// Step count after the update.
    pub step: u64,
    pub recon_loss: f64,
    pub vq_loss: f64,
    pub total: f64,
    pub indices: Option<Vec<Vec<usize>>>,
}

/// Content representation of one utterance.
#[derive(Clone, Debug, PartialEq)]
pub enum Representation {
    Codes(CodeSequence),
    /// `D` columns at the latent frame rate.
    Continuous(FeatureSequence),
}

/// Outcome of [`Model::gradient_check`].
#[derive(Clone, Debug)]
pub struct ModelGradCheck {
    pub report: GradCheckReport,
    /// Largest absolute difference at the probed coordinates between the
    /// training graph's gradient and the surrogate's analytic gradient.
    pub surrogate_gap: f64,
}

/// Parameters, optimizer state and buffers of an IN-WAE or SVQ-WAE model.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub(crate) config: ModelConfig,
    pub(crate) params: ParamSet,
    pub(crate) adam: AdamState,
    pub(crate) step: u64,
    pub(crate) seed: u64,
    pub(crate) codebook_initialized: bool,
    /// Per-speaker reference speaker codes for IN-WAE conversion.
    pub(crate) speaker_refs: Vec<Option<Vec<f32>>>,
}

fn frames_to_segment(frames: &[&[f32]], dim: usize) -> Vec<f32> {
    let t = frames.len();
    let mut out = vec![0.0f32; dim * t];
    for (i, row) in frames.iter().enumerate() {
        for (d, &v) in row.iter().enumerate() {
            out[d * t + i] = v;
        }
    }
    out
}

/// Mirror index into a sequence of length `len` without repeating the edge.
fn reflect(j: usize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len - 1);
    let m = j % period;
    if m < len {
        m
    } else {
        period - m
    }
}

/// A segment cut from an utterance; `keep` output frames are genuine.
struct Window {
    data: Vec<f32>,
    keep: usize,
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = network::init_parameters(&config, &mut rng)?;
        let adam = AdamState::new(config.adam, &params);
        Ok(Self {
            config,
            params,
            adam,
            step: 0,
            seed,
            codebook_initialized: false,
            speaker_refs: vec![None; config.decoder.n_speakers],
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn variant(&self) -> Variant {
        self.config.variant
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn adam(&self) -> &AdamState {
        &self.adam
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn codebook_initialized(&self) -> bool {
        self.codebook_initialized
    }

    /// Current codebooks (SVQ-WAE only).
    pub fn codebook(&self) -> Option<SlicedCodebook> {
        if self.variant() != Variant::SvqWae {
            return None;
        }
        let q = &self.config.quantizer;
        let books = (0..q.n_slices)
            .map(|n| {
                let t = self.params.get(&format!("vq.book{n}")).expect("codebook param").detached();
                Codebook::new(t, q.beta).expect("finite codebook")
            })
            .collect();
        Some(SlicedCodebook::new(books).expect("uniform sub-books"))
    }

    fn bound<'a, T: Element>(&'a self, tape: &mut Tape<T>) -> Bound<'a> {
        Bound::new(self.params.names(), self.params.register(tape))
    }

    fn check_batch(&self, batch: &Tensor, speaker_ids: &[usize]) -> Result<()> {
        let s = batch.shape();
        if s.len() != 3 || s[1] != self.config.encoder.in_dim || s[0] != speaker_ids.len() {
            return Err(ModelError::Shape(format!(
                "batch {s:?} does not match {} speaker ids and {} feature dims",
                speaker_ids.len(),
                self.config.encoder.in_dim
            )));
        }
        Ok(())
    }

    fn init_codebook(&mut self, batch: &Tensor) -> Result<()> {
        let mut tape = Tape::<f32>::new();
        let p = self.bound(&mut tape);
        let x = tape.constant(batch.clone());
        let mut trace = Vec::new();
        let z = *network::content_encode_layers(&mut tape, &p, &self.config, x, &mut trace)?
            .last()
            .expect("ten layers");
        let frames = tape.to_frames(z)?;
        let frames = tape.value(frames).detached();
        let q = self.config.quantizer;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ CODEBOOK_INIT_STREAM);
        let slices = crate::bottlenecks::slice_feature(&frames, q.n_slices)?;
        for (n, s) in slices.iter().enumerate() {
            let book = Codebook::from_samples(s, q.codebook_size, q.beta, q.init_jitter, &mut rng)?;
            *self.params.get_mut(&format!("vq.book{n}")).expect("codebook param") = book.into_embeddings();
        }
        self.codebook_initialized = true;
        Ok(())
    }

    /// One Adam update on `batch: [B, 39, T]` with source speaker ids.
    /// SVQ-WAE codebooks are initialized from this batch's encoder frames
    /// the first time.
    pub fn train_step(&mut self, batch: &Tensor, speaker_ids: &[usize]) -> Result<StepStats> {
        self.check_batch(batch, speaker_ids)?;
        if self.variant() == Variant::SvqWae && !self.codebook_initialized {
            self.init_codebook(batch)?;
        }
        let mut tape = Tape::<f32>::new();
        let p = self.bound(&mut tape);
        let x = tape.constant(batch.clone());
        let fwd = network::forward(&mut tape, &p, &self.config, x, speaker_ids, Assign::Nearest)?;
        let recon = tape.value(fwd.recon).item()? as f64;
        let vq = match fwd.vq_loss {
            Some(v) => tape.value(v).item()? as f64,
            None => 0.0,
        };
        let total = tape.value(fwd.total).item()? as f64;
        if !(recon.is_finite() && vq.is_finite() && total.is_finite()) {
            return Err(ModelError::NonFinite(format!(
                "loss at step {}: recon {recon}, vq {vq}, total {total}",
                self.step + 1
            )));
        }
        tape.backward(fwd.total)?;
        let vars = p.vars().to_vec();
        self.params.zero_grads();
        self.params.collect_grads(&tape, &vars);
        for t in self.params.tensors_mut() {
            if t.grad().is_none() {
                t.set_grad(vec![0.0; t.numel()])?;
            }
        }
        adam_step(&mut self.params, &mut self.adam)?;
        self.params.zero_grads();
        self.step += 1;
        Ok(StepStats {
            step: self.step,
            recon_loss: recon,
            vq_loss: vq,
            total,
            indices: fwd.indices,
        })
    }

    /// Losses of a forward pass without updating anything.
    pub fn evaluate(&self, batch: &Tensor, speaker_ids: &[usize]) -> Result<StepStats> {
        self.check_batch(batch, speaker_ids)?;
        let mut tape = Tape::<f32>::new();
        let p = self.bound(&mut tape);
        let x = tape.constant(batch.clone());
        let fwd = network::forward(&mut tape, &p, &self.config, x, speaker_ids, Assign::Nearest)?;
        let value = |v| -> Result<f64> { Ok(tape.value(v).item()? as f64) };
        Ok(StepStats {
            step: self.step,
            recon_loss: value(fwd.recon)?,
            vq_loss: fwd.vq_loss.map(value).transpose()?.unwrap_or(0.0),
            total: value(fwd.total)?,
            indices: fwd.indices,
        })
    }

    /// Bottleneck layers a training forward pass goes through.
    pub fn bottleneck_trace(&self, batch: &Tensor, speaker_ids: &[usize]) -> Result<Vec<Layer>> {
        self.check_batch(batch, speaker_ids)?;
        let mut tape = Tape::<f32>::new();
        let p = self.bound(&mut tape);
        let x = tape.constant(batch.clone());
        Ok(network::forward(&mut tape, &p, &self.config, x, speaker_ids, Assign::Nearest)?.trace)
    }

    /// Activations after each of the ten encoder layers.
    pub fn encoder_layers(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        let mut tape = Tape::<f32>::new();
        let p = self.bound(&mut tape);
        let xv = tape.constant(x.clone());
        let mut trace = Vec::new();
        let layers = network::content_encode_layers(&mut tape, &p, &self.config, xv, &mut trace)?;
        Ok(layers.into_iter().map(|v| tape.value(v).detached()).collect())
    }

    /// Continuous encoder output `[B, D, T/2^n]`.
    pub fn content_encode(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.encoder_layers(x)?.pop().expect("ten layers"))
    }

    /// Utterance-level speaker code `[B, D_spk]` (IN-WAE only).
    pub fn speaker_encode(&self, y: &Tensor) -> Result<Tensor> {
        if self.variant() != Variant::InWae {
            return Err(ModelError::Config("only IN-WAE has a speaker encoder".into()));
        }
        let s = y.shape();
        if s.len() != 3 || s[1] != self.config.encoder.in_dim || s[2] < 4 {
            return Err(ModelError::Shape(format!("speaker encoder expects [B, 39, T≥4], got {s:?}")));
        }
        let mut tape = Tape::<f32>::new();
        let p = self.bound(&mut tape);
        let yv = tape.constant(y.clone());
        let z = network::speaker_encode(&mut tape, &p, yv)?;
        Ok(tape.value(z).detached())
    }

    /// Decodes a content code `[B, D, T_latent]`. IN-WAE needs `z_s: [B, D_spk]`.
    pub fn decode(&self, z_c: &Tensor, speaker_ids: &[usize], z_s: Option<&Tensor>) -> Result<Tensor> {
        let mut tape = Tape::<f32>::new();
        let p = self.bound(&mut tape);
        let z = tape.constant(z_c.clone());
        let zs = z_s.map(|t| tape.constant(t.clone()));
        let mut trace = Vec::new();
        let out = network::decode(&mut tape, &p, &self.config, z, speaker_ids, zs, &mut trace)?;
        Ok(tape.value(out).detached())
    }

    /// Stores the speaker code of a whole reference utterance for `speaker_id`.
    pub fn set_speaker_reference(&mut self, speaker_id: usize, feat: &FeatureSequence) -> Result<()> {
        self.check_speaker(speaker_id)?;
        self.check_features(feat)?;
        let rows: Vec<&[f32]> = feat.rows().collect();
        let y = Tensor::new(vec![1, feat.dim(), rows.len()], frames_to_segment(&rows, feat.dim()))?;
        let z = self.speaker_encode(&y)?;
        self.speaker_refs[speaker_id] = Some(z.into_data());
        Ok(())
    }

    pub fn speaker_reference(&self, speaker_id: usize) -> Option<&[f32]> {
        self.speaker_refs.get(speaker_id)?.as_deref()
    }

    fn check_speaker(&self, id: usize) -> Result<()> {
        let n = self.config.decoder.n_speakers;
        if id >= n {
            return Err(ModelError::UnknownSpeaker(format!("id {id} (model has {n} speakers)")));
        }
        Ok(())
    }

    fn check_features(&self, feat: &FeatureSequence) -> Result<()> {
        if feat.dim() != self.config.encoder.in_dim {
            return Err(ModelError::Shape(format!(
                "features have {} dims, model expects {}",
                feat.dim(),
                self.config.encoder.in_dim
            )));
        }
        if feat.n_frames() < 4 {
            return Err(ModelError::Shape(format!(
                "utterance `{}` has {} frames; at least 4 are required",
                feat.utterance_id,
                feat.n_frames()
            )));
        }
        Ok(())
    }

    /// Consecutive 32-frame windows; a remainder is reflect-padded to a full
    /// window and only its genuine frames are kept downstream.
    fn windows(&self, feat: &FeatureSequence) -> Vec<Window> {
        let n = feat.n_frames();
        let dim = feat.dim();
        let mut out = Vec::new();
        let full = n / SEGMENT_FRAMES;
        for s in 0..full {
            let rows: Vec<&[f32]> = (0..SEGMENT_FRAMES).map(|t| feat.frame(s * SEGMENT_FRAMES + t)).collect();
            out.push(Window {
                data: frames_to_segment(&rows, dim),
                keep: SEGMENT_FRAMES,
            });
        }
        let r = n - full * SEGMENT_FRAMES;
        if r > 0 {
            let start = full * SEGMENT_FRAMES;
            let rows: Vec<&[f32]> = (0..SEGMENT_FRAMES).map(|j| feat.frame(start + reflect(j, r))).collect();
            out.push(Window {
                data: frames_to_segment(&rows, dim),
                keep: r,
            });
        }
        out
    }

    /// Content code of one window `[1, D, T_latent]` (quantized for SVQ-WAE)
    /// and, for SVQ-WAE, its index tuples.
    fn window_code(&self, w: &Window) -> Result<(Tensor, Option<Vec<Vec<usize>>>)> {
        let x = Tensor::new(vec![1, self.config.encoder.in_dim, SEGMENT_FRAMES], w.data.clone())?;
        let z = self.content_encode(&x)?;
        match self.codebook() {
            None => Ok((z, None)),
            Some(book) => {
                let (d, t) = (z.shape()[1], z.shape()[2]);
                let mut frames = vec![0.0f32; t * d];
                for c in 0..d {
                    for i in 0..t {
                        frames[i * d + c] = z.data()[c * t + i];
                    }
                }
                let q = crate::bottlenecks::sliced_vq_quantize(&Tensor::new(vec![t, d], frames)?, &book)?;
                let mut back = vec![0.0f32; d * t];
                for i in 0..t {
                    for c in 0..d {
                        back[c * t + i] = q.z_q.data()[i * d + c];
                    }
                }
                Ok((Tensor::new(vec![1, d, t], back)?, Some(q.indices)))
            }
        }
    }

    /// Per-frame content representation at the latent rate, concatenated
    /// over windows.
    pub fn encode_utterance(&self, feat: &FeatureSequence) -> Result<Representation> {
        self.check_features(feat)?;
        let factor = self.config.downsample_factor();
        let d = self.config.encoder.latent_dim;
        let mut codes = Vec::new();
        let mut cont = Vec::new();
        for w in self.windows(feat) {
            let keep = w.keep.div_ceil(factor);
            let (z, idx) = self.window_code(&w)?;
            let t = z.shape()[2];
            match idx {
                Some(idx) => codes.extend(idx.into_iter().take(keep)),
                None => {
                    for i in 0..keep {
                        cont.extend((0..d).map(|c| z.data()[c * t + i]));
                    }
                }
            }
        }
        Ok(match self.variant() {
            Variant::SvqWae => Representation::Codes(CodeSequence {
                utterance_id: feat.utterance_id.clone(),
                frames: codes,
            }),
            Variant::InWae => Representation::Continuous(FeatureSequence::new(
                feat.utterance_id.clone(),
                cont,
                d,
                self.config.latent_rate_hz() as f32,
            )?),
        })
    }

    /// Encodes with the content path and decodes as `target_speaker`.
    /// IN-WAE uses the target's stored reference speaker code.
    pub fn convert(&self, source: &FeatureSequence, target_speaker: usize) -> Result<FeatureSequence> {
        self.check_speaker(target_speaker)?;
        self.check_features(source)?;
        let z_s = match self.variant() {
            Variant::InWae => {
                let r = self.speaker_reference(target_speaker).ok_or_else(|| {
                    ModelError::UnknownSpeaker(format!("no reference utterance for speaker id {target_speaker}"))
                })?;
                Some(Tensor::new(vec![1, r.len()], r.to_vec())?)
            }
            Variant::SvqWae => None,
        };
        let dim = self.config.decoder.out_dim;
        let mut out = Vec::with_capacity(source.data().len());
        for w in self.windows(source) {
            let (z, _) = self.window_code(&w)?;
            let x_hat = self.decode(&z, &[target_speaker], z_s.as_ref())?;
            let t = x_hat.shape()[2];
            for i in 0..w.keep {
                out.extend((0..dim).map(|c| x_hat.data()[c * t + i]));
            }
        }
        Ok(FeatureSequence::new(
            source.utterance_id.clone(),
            out,
            dim,
            FEATURE_RATE_HZ as f32,
        )?)
    }

    /// Central-difference check of the total loss against `n_probe` random
    /// parameter coordinates, run in `f64` on a smooth surrogate: the
    /// quantizer assignment is frozen at the base point and every
    /// stop-gradient is replaced by the constant it takes there. Also
    /// reports how far the training graph's gradient is from the
    /// surrogate's at the probed coordinates.
    pub fn gradient_check<R: Rng + ?Sized>(
        &self,
        batch: &Tensor,
        speaker_ids: &[usize],
        n_probe: usize,
        h: f64,
        tol: f64,
        rng: &mut R,
    ) -> Result<ModelGradCheck> {
        self.check_batch(batch, speaker_ids)?;
        let params: ParamSet<f64> = self.params.cast();
        let x64: Tensor<f64> = batch.cast();
        let cfg = self.config;

        // training graph at the base point
        let mut tape = Tape::<f64>::new();
        let vars = params.register(&mut tape);
        let p = Bound::new(params.names(), vars.clone());
        let x = tape.constant(x64.clone());
        let base = network::forward(&mut tape, &p, &cfg, x, speaker_ids, Assign::Nearest)?;
        tape.backward(base.total)?;
        let (indices, ze0, zq0) = match (&base.indices, base.z_e_frames, base.z_q_frames) {
            (Some(i), Some(e), Some(q)) => (i.clone(), tape.value(e).detached(), tape.value(q).detached()),
            _ => (Vec::new(), Tensor::scalar(0.0), Tensor::scalar(0.0)),
        };

        let sizes: Vec<usize> = params.tensors().iter().map(Tensor::numel).collect();
        let total: usize = sizes.iter().sum();
        let mut picks = rand::seq::index::sample(rng, total, n_probe.min(total)).into_vec();
        picks.sort_unstable();
        let locate = |flat: usize| {
            let mut rest = flat;
            for (i, &s) in sizes.iter().enumerate() {
                if rest < s {
                    return (i, rest);
                }
                rest -= s;
            }
            unreachable!("flat index within total")
        };
        let coords: Vec<(usize, usize)> = picks.iter().map(|&f| locate(f)).collect();
        let training_grad: Vec<f64> = coords
            .iter()
            .map(|&(i, j)| tape.grad(vars[i]).map_or(0.0, |g| g[j]))
            .collect();

        let surrogate = |t: &mut Tape<f64>, probe: crate::numerics::Var| -> crate::numerics::Result<_> {
            let mut vs = Vec::with_capacity(params.len());
            for (i, tensor) in params.tensors().iter().enumerate() {
                let c = t.constant(tensor.clone());
                let pairs: Vec<(usize, usize)> = coords
                    .iter()
                    .enumerate()
                    .filter(|(_, &(pi, _))| pi == i)
                    .map(|(k, &(_, j))| (k, j))
                    .collect();
                vs.push(if pairs.is_empty() { c } else { t.scatter_add(c, probe, &pairs)? });
            }
            let p = Bound::new(params.names(), vs);
            let x = t.constant(x64.clone());
            let assign = if cfg.variant == Variant::SvqWae {
                Assign::Surrogate {
                    indices: &indices,
                    ze0: &ze0,
                    zq0: &zq0,
                }
            } else {
                Assign::Nearest
            };
            network::forward(t, &p, &cfg, x, speaker_ids, assign)
                .map(|f| f.total)
                .map_err(|e| crate::numerics::NumericsError::InvalidArgument {
                    op: "model forward",
                    reason: e.to_string(),
                })
        };
        let zeros = Tensor::<f64>::zeros(vec![coords.len().max(1)])?;
        let report = finite_difference_check(&surrogate, &zeros, h, tol)?.with_label(format!(
            "{} total loss, {} probed parameters",
            cfg.variant.name(),
            coords.len()
        ));

        let mut t = Tape::<f64>::new();
        let probe = t.leaf(zeros.clone());
        let loss = surrogate(&mut t, probe)?;
        t.backward(loss)?;
        let sur = t.grad(probe).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; coords.len()]);
        let surrogate_gap = sur
            .iter()
            .zip(&training_grad)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        Ok(ModelGradCheck { report, surrogate_gap })
    }
}
