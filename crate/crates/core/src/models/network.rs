//! Forward graphs of the encoders and the decoder, recorded on a tape.
//! Parameters are looked up by name from a [`Bound`] parameter set.

use rand::Rng;

use crate::bottlenecks::{adain, instance_norm, quantize_with_indices, AdainParams};
use crate::bottlenecks::{nearest_code, Codebook};
use crate::numerics::{Element, ParamSet, Tape, Tensor, Var};

use super::config::{ModelConfig, Variant};
use super::{ModelError, Result};

/// Parameter variables registered on one tape.
pub(crate) struct Bound<'a> {
    names: &'a [String],
    vars: Vec<Var>,
}

impl<'a> Bound<'a> {
    pub fn new(names: &'a [String], vars: Vec<Var>) -> Self {
        Self { names, vars }
    }

    pub fn get(&self, name: &str) -> Var {
        let i = self
            .names
            .iter()
            .position(|n| n == name)
            .unwrap_or_else(|| panic!("parameter `{name}` is not part of this model"));
        self.vars[i]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

/// Bottleneck layers applied during a forward pass, in order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Layer {
    InstanceNorm,
    Adain,
    Quantize,
}

fn conv_shape(c_out: usize, c_in: usize, k: usize) -> Vec<usize> {
    vec![c_out, c_in, k]
}

/// Down-sampling slot `i` (0-based) of the encoder: `(kernel, stride)`.
fn encoder_slot(cfg: &ModelConfig, i: usize) -> (usize, usize) {
    if i < cfg.encoder.n_downsample {
        (4, 2)
    } else {
        (3, 1)
    }
}

/// Names and shapes of every parameter, in registration order.
pub(crate) fn parameter_layout(cfg: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let e = &cfg.encoder;
    let (h, d) = (e.hidden_channels, e.latent_dim);
    let mut out = Vec::new();
    let conv = |out: &mut Vec<(String, Vec<usize>)>, name: &str, shape: Vec<usize>| {
        let c_out = shape[0];
        out.push((format!("{name}.w"), shape));
        out.push((format!("{name}.b"), vec![c_out]));
    };
    conv(&mut out, "enc.conv1", conv_shape(h, e.in_dim, 3));
    conv(&mut out, "enc.conv2", conv_shape(h, h, 3));
    for i in 0..2 {
        let (k, _) = encoder_slot(cfg, i);
        conv(&mut out, &format!("enc.conv{}", i + 3), conv_shape(h, h, k));
    }
    conv(&mut out, "enc.conv5", conv_shape(h, h, 3));
    conv(&mut out, "enc.conv6", conv_shape(d, h, 3));
    for i in 1..=4 {
        conv(&mut out, &format!("enc.res{i}"), conv_shape(d, d, 3));
    }
    if cfg.variant == Variant::InWae {
        let s = &cfg.speaker_encoder;
        conv(&mut out, "spk.conv1", conv_shape(s.channels, e.in_dim, 3));
        conv(&mut out, "spk.conv2", conv_shape(s.channels, s.channels, 3));
        conv(&mut out, "spk.conv3", conv_shape(s.speaker_dim, s.channels, 3));
        out.push(("adain.scale.w".into(), vec![d, s.speaker_dim]));
        out.push(("adain.scale.b".into(), vec![d]));
        out.push(("adain.shift.w".into(), vec![d, s.speaker_dim]));
        out.push(("adain.shift.b".into(), vec![d]));
    }
    let dc = &cfg.decoder;
    let (hd, emb) = (dc.hidden_channels, dc.speaker_embedding_dim);
    out.push(("dec.spk_table".into(), vec![dc.n_speakers, emb]));
    conv(&mut out, "dec.in", conv_shape(hd, d + emb, 3));
    for i in 1..=dc.n_upsample {
        // transposed layout: [c_in, c_out, k]
        out.push((format!("dec.up{i}.w"), vec![hd + emb, hd, 4]));
        out.push((format!("dec.up{i}.b"), vec![hd]));
    }
    conv(&mut out, "dec.out", conv_shape(dc.out_dim, hd, 3));
    if cfg.variant == Variant::SvqWae {
        let w = d / cfg.quantizer.n_slices;
        for n in 0..cfg.quantizer.n_slices {
            out.push((format!("vq.book{n}"), vec![cfg.quantizer.codebook_size, w]));
        }
    }
    out
}

/// Uniform `±1/sqrt(fan_in)` weights, zero biases, unit-range speaker
/// embeddings, `[−1/K, 1/K]` codebooks (replaced by data-dependent rows at
/// the first training step).
pub(crate) fn init_parameters<R: Rng + ?Sized>(cfg: &ModelConfig, rng: &mut R) -> Result<ParamSet> {
    let mut params = ParamSet::new();
    for (name, shape) in parameter_layout(cfg) {
        let t = if name.ends_with(".b") {
            Tensor::zeros(shape)?
        } else if name == "dec.spk_table" {
            Tensor::uniform(shape, 1.0, rng)?
        } else if name.starts_with("vq.book") {
            Tensor::uniform(shape.clone(), 1.0 / shape[0] as f64, rng)?
        } else {
            let fan_in: usize = if name.starts_with("dec.up") {
                shape[0] * shape[2]
            } else {
                shape[1..].iter().product()
            };
            Tensor::uniform(shape, 1.0 / (fan_in as f64).sqrt(), rng)?
        };
        params.insert(name, t)?;
    }
    Ok(params)
}

fn conv<T: Element>(tape: &mut Tape<T>, p: &Bound, name: &str, x: Var, stride: usize, pad: usize) -> Result<Var> {
    let (w, b) = (p.get(&format!("{name}.w")), p.get(&format!("{name}.b")));
    Ok(tape.conv1d(x, w, b, stride, pad)?)
}

/// Encoder activations after each of the ten layers (post-normalization
/// where the variant normalizes). The last entry is `z`.
pub(crate) fn content_encode_layers<T: Element>(
    tape: &mut Tape<T>,
    p: &Bound,
    cfg: &ModelConfig,
    x: Var,
    trace: &mut Vec<Layer>,
) -> Result<Vec<Var>> {
    let shape = tape.shape(x).to_vec();
    let factor = cfg.downsample_factor();
    if shape.len() != 3 || shape[1] != cfg.encoder.in_dim {
        return Err(ModelError::Shape(format!(
            "encoder expects [B, {}, T], got {shape:?}",
            cfg.encoder.in_dim
        )));
    }
    if shape[2] < 4 || shape[2] % factor != 0 {
        return Err(ModelError::Shape(format!(
            "{} frames cannot be down-sampled by {factor}",
            shape[2]
        )));
    }
    let norm = |tape: &mut Tape<T>, v: Var, layer: usize, trace: &mut Vec<Layer>| -> Result<Var> {
        if cfg.encoder.with_in && layer % 2 == 0 {
            trace.push(Layer::InstanceNorm);
            Ok(instance_norm(tape, v, &cfg.norm)?)
        } else {
            Ok(v)
        }
    };
    let mut layers = Vec::with_capacity(10);
    let mut h = x;
    for layer in 1..=6 {
        let stride = match layer {
            3 => encoder_slot(cfg, 0).1,
            4 => encoder_slot(cfg, 1).1,
            _ => 1,
        };
        // k=4, s=2 with one frame of padding halves the length exactly
        h = conv(tape, p, &format!("enc.conv{layer}"), h, stride, 1)?;
        if layer < 6 {
            h = tape.relu(h)?;
        }
        h = norm(tape, h, layer, trace)?;
        layers.push(h);
    }
    for block in 1..=4 {
        let r = conv(tape, p, &format!("enc.res{block}"), h, 1, 1)?;
        let r = tape.relu(r)?;
        h = tape.add(h, r)?;
        h = norm(tape, h, block + 6, trace)?;
        layers.push(h);
    }
    Ok(layers)
}

/// `[B, 39, T] → [B, D_spk]`: three circular convolutions, then a global
/// average over time.
pub(crate) fn speaker_encode<T: Element>(tape: &mut Tape<T>, p: &Bound, x: Var) -> Result<Var> {
    let mut h = x;
    for i in 1..=3 {
        let name = format!("spk.conv{i}");
        h = tape.conv1d_circular(h, p.get(&format!("{name}.w")), p.get(&format!("{name}.b")))?;
        if i < 3 {
            h = tape.relu(h)?;
        }
    }
    Ok(tape.mean_time(h)?)
}

fn with_speaker<T: Element>(tape: &mut Tape<T>, h: Var, emb: Var) -> Result<Var> {
    let time = tape.shape(h)[2];
    let e = tape.broadcast_time(emb, time)?;
    Ok(tape.concat_channels(h, e)?)
}

/// Feature-domain decoder. `z_s` is required exactly for IN-WAE, where the
/// content first passes AdaIN.
pub(crate) fn decode<T: Element>(
    tape: &mut Tape<T>,
    p: &Bound,
    cfg: &ModelConfig,
    z: Var,
    speaker_ids: &[usize],
    z_s: Option<Var>,
    trace: &mut Vec<Layer>,
) -> Result<Var> {
    let n_spk = cfg.decoder.n_speakers;
    if let Some(&bad) = speaker_ids.iter().find(|&&s| s >= n_spk) {
        return Err(ModelError::UnknownSpeaker(format!("id {bad} (model has {n_spk} speakers)")));
    }
    let batch = tape.shape(z)[0];
    if speaker_ids.len() != batch {
        return Err(ModelError::Shape(format!(
            "{} speaker ids for a batch of {batch}",
            speaker_ids.len()
        )));
    }
    let mut h = z;
    match (cfg.variant, z_s) {
        (Variant::InWae, Some(zs)) => {
            let maps = AdainParams {
                scale_w: p.get("adain.scale.w"),
                scale_b: p.get("adain.scale.b"),
                shift_w: p.get("adain.shift.w"),
                shift_b: p.get("adain.shift.b"),
            };
            trace.push(Layer::Adain);
            h = adain(tape, h, zs, &maps)?;
        }
        (Variant::InWae, None) => {
            return Err(ModelError::Shape("IN-WAE decoding needs a speaker code".into()))
        }
        (Variant::SvqWae, _) => {}
    }
    let emb = tape.gather_rows(p.get("dec.spk_table"), speaker_ids)?;
    h = with_speaker(tape, h, emb)?;
    h = conv(tape, p, "dec.in", h, 1, 1)?;
    h = tape.relu(h)?;
    for i in 1..=cfg.decoder.n_upsample {
        h = with_speaker(tape, h, emb)?;
        let name = format!("dec.up{i}");
        h = tape.conv_transpose1d(h, p.get(&format!("{name}.w")), p.get(&format!("{name}.b")), 2)?;
        h = tape.relu(h)?;
    }
    conv(tape, p, "dec.out", h, 1, 1)
}

/// How the quantizer picks and differentiates codebook rows.
pub(crate) enum Assign<'a, T: Element> {
    /// Nearest neighbour, stop-gradient losses, straight-through output.
    Nearest,
    /// Smooth stand-in for gradient checks: the given assignment, with every
    /// stop-gradient replaced by the constant it evaluates to at the base
    /// point (`ze0`, `zq0` as `[B·T, D]` frames), and the straight-through
    /// output written as `z_e + (zq0 − ze0)`. Its true derivative is the
    /// gradient the training graph defines.
    Surrogate {
        indices: &'a [Vec<usize>],
        ze0: &'a Tensor<T>,
        zq0: &'a Tensor<T>,
    },
}

pub(crate) struct Forward {
    pub recon: Var,
    pub vq_loss: Option<Var>,
    pub total: Var,
    /// Encoder output frames `[B·T_latent, D]` (SVQ only).
    pub z_e_frames: Option<Var>,
    pub z_q_frames: Option<Var>,
    pub indices: Option<Vec<Vec<usize>>>,
    pub trace: Vec<Layer>,
}

fn book_vars(p: &Bound, cfg: &ModelConfig) -> Vec<Var> {
    (0..cfg.quantizer.n_slices)
        .map(|n| p.get(&format!("vq.book{n}")))
        .collect()
}

fn surrogate_quantize<T: Element>(
    tape: &mut Tape<T>,
    z_e: Var,
    books: &[Var],
    beta: f64,
    indices: &[Vec<usize>],
    ze0: &Tensor<T>,
    zq0: &Tensor<T>,
) -> Result<(Var, Var, Var)> {
    let d = tape.shape(z_e)[1];
    let w = d / books.len();
    let mut loss: Option<Var> = None;
    let mut parts = Vec::new();
    for (s, &b) in books.iter().enumerate() {
        let rows: Vec<usize> = indices.iter().map(|r| r[s]).collect();
        let zq = tape.gather_rows(b, &rows)?;
        let slice = if books.len() == 1 { z_e } else { tape.slice_cols(z_e, s * w, w)? };
        let ze0_v = tape.constant(ze0.clone());
        let zq0_v = tape.constant(zq0.clone());
        let (ze0_s, zq0_s) = if books.len() == 1 {
            (ze0_v, zq0_v)
        } else {
            (tape.slice_cols(ze0_v, s * w, w)?, tape.slice_cols(zq0_v, s * w, w)?)
        };
        let cb = tape.mse(ze0_s, zq)?;
        let cb = tape.scale(cb, w as f64)?;
        let cm = tape.mse(slice, zq0_s)?;
        let cm = tape.scale(cm, w as f64 * beta)?;
        let l = tape.add(cb, cm)?;
        loss = Some(match loss {
            Some(acc) => tape.add(acc, l)?,
            None => l,
        });
        parts.push(zq);
    }
    let z_q = if parts.len() == 1 { parts[0] } else { tape.concat_cols(&parts)? };
    let shift: Vec<T> = zq0.data().iter().zip(ze0.data()).map(|(&q, &e)| q - e).collect();
    let shift = tape.constant(Tensor::new(zq0.shape().to_vec(), shift)?);
    let out = tape.add(z_e, shift)?;
    Ok((out, z_q, loss.expect("at least one slice")))
}

/// Full auto-encoder pass with reconstruction (and VQ) losses.
pub(crate) fn forward<T: Element>(
    tape: &mut Tape<T>,
    p: &Bound,
    cfg: &ModelConfig,
    x: Var,
    speaker_ids: &[usize],
    assign: Assign<'_, T>,
) -> Result<Forward> {
    let mut trace = Vec::new();
    let z = *content_encode_layers(tape, p, cfg, x, &mut trace)?
        .last()
        .expect("ten layers");
    let batch = tape.shape(x)[0];
    let (decoder_in, vq_loss, z_e_frames, z_q_frames, indices) = match cfg.variant {
        Variant::InWae => (z, None, None, None, None),
        Variant::SvqWae => {
            trace.push(Layer::Quantize);
            let frames = tape.to_frames(z)?;
            let books = book_vars(p, cfg);
            let beta = cfg.quantizer.beta;
            let (out, z_q, loss, idx) = match assign {
                Assign::Nearest => {
                    let idx = nearest_indices(tape, frames, &books)?;
                    let q = quantize_with_indices(tape, frames, &books, beta, idx)?;
                    (q.output, q.z_q, q.vq_loss, q.indices)
                }
                Assign::Surrogate { indices, ze0, zq0 } => {
                    let (o, zq, l) = surrogate_quantize(tape, frames, &books, beta, indices, ze0, zq0)?;
                    (o, zq, l, indices.to_vec())
                }
            };
            let back = tape.from_frames(out, batch)?;
            (back, Some(loss), Some(frames), Some(z_q), Some(idx))
        }
    };
    let z_s = match cfg.variant {
        Variant::InWae => Some(speaker_encode(tape, p, x)?),
        Variant::SvqWae => None,
    };
    let x_hat = decode(tape, p, cfg, decoder_in, speaker_ids, z_s, &mut trace)?;
    let recon = tape.mse(x_hat, x)?;
    let total = match vq_loss {
        Some(l) => tape.add(recon, l)?,
        None => recon,
    };
    Ok(Forward {
        recon,
        vq_loss,
        total,
        z_e_frames,
        z_q_frames,
        indices,
        trace,
    })
}

/// Nearest rows for every frame and slice, read from the tape's current
/// codebook values.
pub(crate) fn nearest_indices<T: Element>(tape: &Tape<T>, frames: Var, books: &[Var]) -> Result<Vec<Vec<usize>>> {
    let fv = tape.value(frames);
    let d = fv.shape()[1];
    let w = d / books.len();
    let codebooks = books
        .iter()
        .map(|&b| Codebook::new(tape.value(b).detached(), 0.0))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    if let Some(i) = fv.data().iter().position(|v| !v.is_finite()) {
        return Err(ModelError::NonFinite(format!("encoder output frame {} is not finite", i / d)));
    }
    Ok(fv
        .data()
        .chunks(d)
        .map(|row| {
            codebooks
                .iter()
                .enumerate()
                .map(|(s, b)| nearest_code(&row[s * w..(s + 1) * w], b).0)
                .collect()
        })
        .collect())
}
