use rand::seq::index::sample;
use rand::Rng;

use crate::numerics::{Element, Tape, Tensor, Var};

use super::{BottleneckError, Result};

pub const DEFAULT_BETA: f64 = 0.25;

/// `K` embeddings of width `D`, plus the commitment weight.
#[derive(Clone, Debug, PartialEq)]
pub struct Codebook<T: Element = f32> {
    embeddings: Tensor<T>,
    pub beta: f64,
}

impl<T: Element> Codebook<T> {
    pub fn new(embeddings: Tensor<T>, beta: f64) -> Result<Self> {
        if embeddings.shape().len() != 2 {
            return Err(BottleneckError::Config(format!(
                "codebook must be [K, D], got {:?}",
                embeddings.shape()
            )));
        }
        if !embeddings.all_finite() {
            return Err(BottleneckError::Config("codebook has non-finite entries".into()));
        }
        if !(beta >= 0.0 && beta.is_finite()) {
            return Err(BottleneckError::Config(format!("beta must be ≥ 0, got {beta}")));
        }
        Ok(Self { embeddings, beta })
    }

    /// Entries uniform in `[−1/K, 1/K]`.
    pub fn uniform<R: Rng + ?Sized>(k: usize, d: usize, beta: f64, rng: &mut R) -> Result<Self> {
        if k == 0 || d == 0 {
            return Err(BottleneckError::Config("K and D must be at least 1".into()));
        }
        Self::new(Tensor::uniform(vec![k, d], 1.0 / k as f64, rng)?, beta)
    }

    /// Rows drawn from `samples: [R, D]` (without replacement when R ≥ K),
    /// each nudged by uniform noise of amplitude `jitter` so duplicates
    /// separate.
    pub fn from_samples<R: Rng + ?Sized>(
        samples: &Tensor<T>,
        k: usize,
        beta: f64,
        jitter: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let (rows, d) = (samples.shape()[0], samples.shape()[1]);
        if k == 0 {
            return Err(BottleneckError::Config("K must be at least 1".into()));
        }
        let picks: Vec<usize> = if rows >= k {
            sample(rng, rows, k).into_vec()
        } else {
            (0..k).map(|_| rng.gen_range(0..rows)).collect()
        };
        let mut data = Vec::with_capacity(k * d);
        for r in picks {
            for &v in &samples.data()[r * d..(r + 1) * d] {
                data.push(v + T::of(rng.gen_range(-jitter..=jitter)));
            }
        }
        Self::new(Tensor::new(vec![k, d], data)?, beta)
    }

    pub fn k(&self) -> usize {
        self.embeddings.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.embeddings.shape()[1]
    }

    pub fn embeddings(&self) -> &Tensor<T> {
        &self.embeddings
    }

    pub fn into_embeddings(self) -> Tensor<T> {
        self.embeddings
    }

    pub fn row(&self, k: usize) -> &[T] {
        let d = self.dim();
        &self.embeddings.data()[k * d..(k + 1) * d]
    }
}

/// `N` codebooks over contiguous slices of a `D`-wide latent.
#[derive(Clone, Debug, PartialEq)]
pub struct SlicedCodebook<T: Element = f32> {
    books: Vec<Codebook<T>>,
}

impl<T: Element> SlicedCodebook<T> {
    pub fn new(books: Vec<Codebook<T>>) -> Result<Self> {
        let first = books
            .first()
            .ok_or_else(|| BottleneckError::Config("at least one slice required".into()))?;
        let (k, w) = (first.k(), first.dim());
        if let Some(b) = books.iter().find(|b| b.k() != k || b.dim() != w) {
            return Err(BottleneckError::Config(format!(
                "sub-codebooks must share shape [{k}, {w}], found [{}, {}]",
                b.k(),
                b.dim()
            )));
        }
        Ok(Self { books })
    }

    /// Splits `total_dim` into `n` slices and builds each sub-codebook with
    /// `make(slice_index, slice_width)`.
    pub fn build(
        total_dim: usize,
        n: usize,
        mut make: impl FnMut(usize, usize) -> Result<Codebook<T>>,
    ) -> Result<Self> {
        let width = slice_width(total_dim, n)?;
        Self::new((0..n).map(|i| make(i, width)).collect::<Result<_>>()?)
    }

    pub fn n_slices(&self) -> usize {
        self.books.len()
    }

    pub fn k(&self) -> usize {
        self.books[0].k()
    }

    pub fn slice_dim(&self) -> usize {
        self.books[0].dim()
    }

    pub fn total_dim(&self) -> usize {
        self.slice_dim() * self.n_slices()
    }

    pub fn books(&self) -> &[Codebook<T>] {
        &self.books
    }
}

impl<T: Element> From<Codebook<T>> for SlicedCodebook<T> {
    fn from(book: Codebook<T>) -> Self {
        Self { books: vec![book] }
    }
}

/// Outcome of quantizing `[T_latent, D]` frames.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantizeResult<T: Element = f32> {
    pub z_q: Tensor<T>,
    /// One row per frame, one index per slice.
    pub indices: Vec<Vec<usize>>,
    pub vq_loss: f64,
}

fn slice_width(total: usize, n: usize) -> Result<usize> {
    if n == 0 || total % n != 0 {
        return Err(BottleneckError::Config(format!(
            "latent width {total} is not divisible into {n} slices"
        )));
    }
    Ok(total / n)
}

fn check_frames<T: Element>(z_e: &Tensor<T>) -> Result<(usize, usize)> {
    if z_e.shape().len() != 2 {
        return Err(BottleneckError::Config(format!(
            "expected frames [T, D], got {:?}",
            z_e.shape()
        )));
    }
    let (rows, d) = (z_e.shape()[0], z_e.shape()[1]);
    if let Some(i) = z_e.data().iter().position(|v| !v.is_finite()) {
        return Err(BottleneckError::NonFinite { frame: i / d });
    }
    Ok((rows, d))
}

/// Index of the closest embedding by squared Euclidean distance, lowest
/// index on ties, and that distance.
pub fn nearest_code<T: Element>(z: &[T], book: &Codebook<T>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for k in 0..book.k() {
        let dist: f64 = z
            .iter()
            .zip(book.row(k))
            .map(|(&a, &b)| (a.f64() - b.f64()).powi(2))
            .sum();
        if dist < best.1 {
            best = (k, dist);
        }
    }
    best
}

/// Contiguous column slices of `z_e: [T, D]`.
pub fn slice_feature<T: Element>(z_e: &Tensor<T>, n: usize) -> Result<Vec<Tensor<T>>> {
    let (rows, d) = check_frames(z_e)?;
    let w = slice_width(d, n)?;
    (0..n)
        .map(|s| {
            let data = z_e
                .data()
                .chunks(d)
                .flat_map(|r| r[s * w..(s + 1) * w].iter().copied())
                .collect();
            Ok(Tensor::new(vec![rows, w], data)?)
        })
        .collect()
}

/// Nearest-neighbour quantization of each frame.
pub fn vq_quantize<T: Element>(z_e: &Tensor<T>, book: &Codebook<T>) -> Result<QuantizeResult<T>> {
    let (rows, d) = check_frames(z_e)?;
    if d != book.dim() {
        return Err(BottleneckError::Dimension {
            expected: book.dim(),
            got: d,
        });
    }
    let mut z_q = Vec::with_capacity(rows * d);
    let mut indices = Vec::with_capacity(rows);
    let mut sq = 0.0f64;
    for frame in z_e.data().chunks(d) {
        let (k, dist) = nearest_code(frame, book);
        z_q.extend_from_slice(book.row(k));
        indices.push(vec![k]);
        sq += dist;
    }
    // both loss terms share the forward value ‖z_e − z_q‖²
    let vq_loss = (1.0 + book.beta) * sq / rows as f64;
    Ok(QuantizeResult {
        z_q: Tensor::new(vec![rows, d], z_q)?,
        indices,
        vq_loss,
    })
}

/// Quantizes each slice with its own codebook and concatenates the results.
/// The loss is summed over slices.
pub fn sliced_vq_quantize<T: Element>(
    z_e: &Tensor<T>,
    book: &SlicedCodebook<T>,
) -> Result<QuantizeResult<T>> {
    let (rows, d) = check_frames(z_e)?;
    if d != book.total_dim() {
        return Err(BottleneckError::Dimension {
            expected: book.total_dim(),
            got: d,
        });
    }
    let parts = slice_feature(z_e, book.n_slices())?
        .iter()
        .zip(book.books())
        .map(|(s, b)| vq_quantize(s, b))
        .collect::<Result<Vec<_>>>()?;
    let w = book.slice_dim();
    let mut z_q = Vec::with_capacity(rows * d);
    let mut indices = vec![Vec::with_capacity(parts.len()); rows];
    for r in 0..rows {
        for p in &parts {
            z_q.extend_from_slice(&p.z_q.data()[r * w..(r + 1) * w]);
            indices[r].push(p.indices[r][0]);
        }
    }
    Ok(QuantizeResult {
        z_q: Tensor::new(vec![rows, d], z_q)?,
        indices,
        vq_loss: parts.iter().map(|p| p.vq_loss).sum(),
    })
}

/// The two stop-gradient penalty terms, each a squared norm averaged over
/// frames.
#[derive(Clone, Copy, Debug)]
pub struct VqLossTerms {
    /// `‖sg(z_e) − z_q‖²`; only reaches the codebook.
    pub codebook: Var,
    /// `β‖z_e − sg(z_q)‖²`; only reaches the encoder.
    pub commitment: Var,
}

pub fn vq_loss_terms<T: Element>(tape: &mut Tape<T>, z_e: Var, z_q: Var, beta: f64) -> Result<VqLossTerms> {
    let shape = tape.shape(z_e).to_vec();
    let width = *shape.last().unwrap_or(&1) as f64;
    let ze_fixed = tape.detach(z_e)?;
    let zq_fixed = tape.detach(z_q)?;
    let codebook = tape.mse(ze_fixed, z_q)?;
    let commitment = tape.mse(z_e, zq_fixed)?;
    // mse averages over every element; rescale so rows sum and frames average
    Ok(VqLossTerms {
        codebook: tape.scale(codebook, width)?,
        commitment: tape.scale(commitment, width * beta)?,
    })
}

/// `‖sg(z_e) − z_q‖² + β‖z_e − sg(z_q)‖²`, squared norms averaged over
/// frames.
pub fn vq_loss<T: Element>(tape: &mut Tape<T>, z_e: Var, z_q: Var, beta: f64) -> Result<Var> {
    let terms = vq_loss_terms(tape, z_e, z_q, beta)?;
    Ok(tape.add(terms.codebook, terms.commitment)?)
}

/// Forward value `z_q`, gradient routed to `z_e`.
pub fn straight_through<T: Element>(tape: &mut Tape<T>, z_e: Var, z_q: Var) -> Result<Var> {
    Ok(tape.straight_through(z_e, z_q)?)
}

/// Quantization recorded on a tape.
#[derive(Clone, Debug)]
pub struct TapeQuantization {
    /// Straight-through output: value `z_q`, gradient to `z_e`.
    pub output: Var,
    /// Raw concatenated codebook rows, before the straight-through op.
    pub z_q: Var,
    pub vq_loss: Var,
    pub indices: Vec<Vec<usize>>,
}

/// Nearest-neighbour assignment of `z_e: [R, D]` against codebook variables
/// `books` (each `[K, D/N]`), then [`quantize_with_indices`].
pub fn quantize_on_tape<T: Element>(
    tape: &mut Tape<T>,
    z_e: Var,
    books: &[Var],
    beta: f64,
) -> Result<TapeQuantization> {
    let n = books.len();
    let ze = tape.value(z_e);
    let (rows, d) = check_frames(ze)?;
    let w = slice_width(d, n)?;
    let mut indices = vec![Vec::with_capacity(n); rows];
    for (s, &b) in books.iter().enumerate() {
        let book = Codebook::new(tape.value(b).detached(), beta)?;
        if book.dim() != w {
            return Err(BottleneckError::Dimension {
                expected: w,
                got: book.dim(),
            });
        }
        let ze = tape.value(z_e);
        for (r, frame) in ze.data().chunks(d).enumerate() {
            indices[r].push(nearest_code(&frame[s * w..(s + 1) * w], &book).0);
        }
    }
    quantize_with_indices(tape, z_e, books, beta, indices)
}

/// Records lookups, losses and the straight-through output for a given
/// assignment. Fixing the assignment makes the quantizer a smooth function
/// of `z_e` and the codebooks, which is what gradient checks need.
pub fn quantize_with_indices<T: Element>(
    tape: &mut Tape<T>,
    z_e: Var,
    books: &[Var],
    beta: f64,
    indices: Vec<Vec<usize>>,
) -> Result<TapeQuantization> {
    let n = books.len();
    let d = tape.shape(z_e)[1];
    let w = slice_width(d, n)?;
    let mut quantized = Vec::with_capacity(n);
    let mut loss: Option<Var> = None;
    for (s, &b) in books.iter().enumerate() {
        let slice = if n == 1 { z_e } else { tape.slice_cols(z_e, s * w, w)? };
        let rows: Vec<usize> = indices.iter().map(|r| r[s]).collect();
        let zq = tape.gather_rows(b, &rows)?;
        let l = vq_loss(tape, slice, zq, beta)?;
        loss = Some(match loss {
            Some(acc) => tape.add(acc, l)?,
            None => l,
        });
        quantized.push(zq);
    }
    let z_q = if n == 1 { quantized[0] } else { tape.concat_cols(&quantized)? };
    let output = tape.straight_through(z_e, z_q)?;
    Ok(TapeQuantization {
        output,
        z_q,
        vq_loss: loss.expect("at least one slice"),
        indices,
    })
}
