//! Wengert-list recording of forward operations and their reverse sweep.
//!
//! Every op appends one node holding its output value and whatever it needs
//! for the backward pass. Nodes are appended after their inputs, so a single
//! reverse walk visits each node once in a valid order.

use std::sync::atomic::{AtomicU64, Ordering};

use super::conv::{self, ConvGeom, Padding, UpGeom};
use super::gemm::{gemm, Mat};
use super::{Element, NumericsError, Result, Tensor};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    index: usize,
}

enum Op<T> {
    Leaf,
    Constant,
    Conv1d {
        x: usize,
        w: usize,
        b: usize,
        geom: ConvGeom,
        cols: Vec<T>,
    },
    ConvTranspose1d {
        x: usize,
        w: usize,
        b: usize,
        geom: UpGeom,
    },
    Linear {
        x: usize,
        w: usize,
        b: usize,
    },
    Relu(usize),
    Exp(usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, T),
    Sum(usize),
    Mean(usize),
    Mse(usize, usize),
    InstanceNorm {
        x: usize,
        group_of: GroupMap,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    ChannelAffine {
        x: usize,
        scale: usize,
        shift: usize,
    },
    MeanTime(usize),
    BroadcastTime(usize),
    ConcatChannels(usize, usize),
    GatherRows {
        table: usize,
        rows: Vec<usize>,
    },
    ToFrames(usize),
    FromFrames(usize),
    SliceCols {
        x: usize,
        start: usize,
    },
    ConcatCols(Vec<usize>),
    StraightThrough(usize),
    ScatterAdd {
        base: usize,
        src: usize,
        pairs: Vec<(usize, usize)>,
    },
}

/// Maps a flat `[B, C, T]` index to its normalization group.
#[derive(Clone, Copy, Debug)]
struct GroupMap {
    channels: usize,
    time: usize,
    per_instance: bool,
}

impl GroupMap {
    fn groups(&self, batch: usize) -> usize {
        if self.per_instance {
            batch * self.channels
        } else {
            self.channels
        }
    }

    fn group(&self, flat: usize) -> usize {
        if self.per_instance {
            flat / self.time
        } else {
            (flat / self.time) % self.channels
        }
    }
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Records operations for one forward pass.
pub struct Tape<T: Element = f32> {
    id: u64,
    nodes: Vec<Node<T>>,
}

impl<T: Element> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn expect_rank(op: &'static str, shape: &[usize], rank: usize) -> Result<()> {
    if shape.len() != rank {
        return Err(NumericsError::InvalidArgument {
            op,
            reason: format!("expected a rank-{rank} tensor, got shape {shape:?}"),
        });
    }
    Ok(())
}

fn same_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<()> {
    if a != b {
        return Err(NumericsError::ShapeMismatch {
            op,
            left: a.to_vec(),
            right: b.to_vec(),
        });
    }
    Ok(())
}

fn add_into<T: Element>(dst: &mut [T], src: &[T]) {
    dst.iter_mut().zip(src).for_each(|(d, &s)| *d += s);
}

impl<T: Element> Tape<T> {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn index(&self, v: Var) -> Result<usize> {
        if v.tape != self.id || v.index >= self.nodes.len() {
            return Err(NumericsError::ForeignVar);
        }
        Ok(v.index)
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[usize]) -> Var {
        let requires_grad = match op {
            Op::Leaf => true,
            Op::Constant => false,
            _ => inputs.iter().any(|&i| self.nodes[i].requires_grad),
        };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            tape: self.id,
            index: self.nodes.len() - 1,
        }
    }

    /// Records a differentiable input; its gradient accumulates on backward.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push(value.detached(), Op::Leaf, &[])
    }

    /// Records an input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value.detached(), Op::Constant, &[])
    }

    /// Panics if `v` was produced by a different tape.
    pub fn value(&self, v: Var) -> &Tensor<T> {
        let i = self.index(v).expect("variable belongs to a different tape");
        &self.nodes[i].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    /// Accumulated gradient of a leaf after [`Tape::backward`].
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.value(v).grad()
    }

    fn result(&mut self, shape: Vec<usize>, data: Vec<T>, op: Op<T>, inputs: &[usize]) -> Result<Var> {
        let value = Tensor::new(shape, data)?;
        Ok(self.push(value, op, inputs))
    }

    // ── convolution family ─────────────────────────────────────────────

    /// Cross-correlation over time with zero padding.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var, stride: usize, padding: usize) -> Result<Var> {
        self.conv_impl(x, w, b, stride, Padding::Zeros(padding))
    }

    /// Stride-1 "same" convolution with wrap-around padding; `k` must be odd.
    pub fn conv1d_circular(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let k = *self.value(w).shape().last().unwrap_or(&1);
        if k % 2 == 0 {
            return Err(NumericsError::InvalidArgument {
                op: "conv1d_circular",
                reason: format!("kernel size must be odd, got {k}"),
            });
        }
        self.conv_impl(x, w, b, 1, Padding::Circular((k - 1) / 2))
    }

    fn conv_impl(&mut self, x: Var, w: Var, b: Var, stride: usize, padding: Padding) -> Result<Var> {
        let (xi, wi, bi) = (self.index(x)?, self.index(w)?, self.index(b)?);
        let xs = self.nodes[xi].value.shape().to_vec();
        let ws = self.nodes[wi].value.shape().to_vec();
        expect_rank("conv1d", &xs, 3)?;
        expect_rank("conv1d", &ws, 3)?;
        if xs[1] != ws[1] {
            return Err(NumericsError::ShapeMismatch {
                op: "conv1d",
                left: xs,
                right: ws,
            });
        }
        same_shape("conv1d bias", self.nodes[bi].value.shape(), &[ws[0]])?;
        let (t, k, p) = (xs[2], ws[2], padding.amount());
        if stride == 0 || t + 2 * p < k {
            return Err(NumericsError::InvalidArgument {
                op: "conv1d",
                reason: format!("stride {stride}, kernel {k}, padding {p} invalid for {t} frames"),
            });
        }
        let geom = ConvGeom {
            batch: xs[0],
            c_in: xs[1],
            c_out: ws[0],
            t_in: t,
            t_out: (t + 2 * p - k) / stride + 1,
            kernel: k,
            stride,
            padding,
        };
        let (out, cols) = conv::conv1d_forward(
            &geom,
            self.nodes[xi].value.data(),
            self.nodes[wi].value.data(),
            self.nodes[bi].value.data(),
        );
        let shape = vec![geom.batch, geom.c_out, geom.t_out];
        self.result(
            shape,
            out,
            Op::Conv1d {
                x: xi,
                w: wi,
                b: bi,
                geom,
                cols,
            },
            &[xi, wi, bi],
        )
    }

    /// Transposed convolution producing exactly `T·stride` frames.
    /// Weight layout is `[C_in, C_out, k]` with `k ≥ stride`.
    pub fn conv_transpose1d(&mut self, x: Var, w: Var, b: Var, stride: usize) -> Result<Var> {
        let (xi, wi, bi) = (self.index(x)?, self.index(w)?, self.index(b)?);
        let xs = self.nodes[xi].value.shape().to_vec();
        let ws = self.nodes[wi].value.shape().to_vec();
        expect_rank("conv_transpose1d", &xs, 3)?;
        expect_rank("conv_transpose1d", &ws, 3)?;
        if xs[1] != ws[0] {
            return Err(NumericsError::ShapeMismatch {
                op: "conv_transpose1d",
                left: xs,
                right: ws,
            });
        }
        same_shape("conv_transpose1d bias", self.nodes[bi].value.shape(), &[ws[1]])?;
        if stride == 0 || ws[2] < stride {
            return Err(NumericsError::InvalidArgument {
                op: "conv_transpose1d",
                reason: format!("kernel {} must be at least the stride {stride}", ws[2]),
            });
        }
        let geom = UpGeom {
            batch: xs[0],
            c_in: xs[1],
            c_out: ws[1],
            t_in: xs[2],
            kernel: ws[2],
            stride,
        };
        let out = conv::conv_transpose1d_forward(
            &geom,
            self.nodes[xi].value.data(),
            self.nodes[wi].value.data(),
            self.nodes[bi].value.data(),
        );
        let shape = vec![geom.batch, geom.c_out, geom.t_out()];
        self.result(shape, out, Op::ConvTranspose1d { x: xi, w: wi, b: bi, geom }, &[xi, wi, bi])
    }

    /// `x·Wᵀ + b` for `x: [B, D_in]`, `W: [D_out, D_in]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xi, wi, bi) = (self.index(x)?, self.index(w)?, self.index(b)?);
        let xs = self.nodes[xi].value.shape().to_vec();
        let ws = self.nodes[wi].value.shape().to_vec();
        expect_rank("linear", &xs, 2)?;
        expect_rank("linear", &ws, 2)?;
        if xs[1] != ws[1] {
            return Err(NumericsError::ShapeMismatch {
                op: "linear",
                left: xs,
                right: ws,
            });
        }
        same_shape("linear bias", self.nodes[bi].value.shape(), &[ws[0]])?;
        let (batch, d_in, d_out) = (xs[0], xs[1], ws[0]);
        let mut out = vec![T::zero(); batch * d_out];
        gemm(
            Mat::new(self.nodes[xi].value.data(), batch, d_in),
            Mat::new(self.nodes[wi].value.data(), d_out, d_in).t(),
            &mut out,
            false,
        );
        let bias = self.nodes[bi].value.data();
        for row in out.chunks_mut(d_out) {
            add_into(row, bias);
        }
        self.result(vec![batch, d_out], out, Op::Linear { x: xi, w: wi, b: bi }, &[xi, wi, bi])
    }

    // ── elementwise ────────────────────────────────────────────────────

    fn unary(&mut self, x: Var, f: impl Fn(T) -> T, op: impl FnOnce(usize) -> Op<T>) -> Result<Var> {
        let xi = self.index(x)?;
        let src = &self.nodes[xi].value;
        let data = src.data().iter().map(|&v| f(v)).collect();
        let shape = src.shape().to_vec();
        self.result(shape, data, op(xi), &[xi])
    }

    fn binary(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T, op: Op<T>) -> Result<Var> {
        let (ai, bi) = (self.index(a)?, self.index(b)?);
        let (av, bv) = (&self.nodes[ai].value, &self.nodes[bi].value);
        same_shape(name, av.shape(), bv.shape())?;
        let data = av.data().iter().zip(bv.data()).map(|(&p, &q)| f(p, q)).collect();
        let shape = av.shape().to_vec();
        self.result(shape, data, op, &[ai, bi])
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary(x, |v| v.max(T::zero()), Op::Relu)
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.unary(x, |v| v.exp(), Op::Exp)
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        let f = T::of(factor);
        self.unary(x, |v| v * f, |i| Op::Scale(i, f))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let op = Op::Add(self.index(a)?, self.index(b)?);
        self.binary("add", a, b, |p, q| p + q, op)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let op = Op::Sub(self.index(a)?, self.index(b)?);
        self.binary("sub", a, b, |p, q| p - q, op)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let op = Op::Mul(self.index(a)?, self.index(b)?);
        self.binary("mul", a, b, |p, q| p * q, op)
    }

    // ── reductions ─────────────────────────────────────────────────────

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let xi = self.index(x)?;
        let s: f64 = self.nodes[xi].value.data().iter().map(|v| v.f64()).sum();
        self.result(vec![1], vec![T::of(s)], Op::Sum(xi), &[xi])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let xi = self.index(x)?;
        let v = &self.nodes[xi].value;
        let s: f64 = v.data().iter().map(|v| v.f64()).sum();
        let m = s / v.numel() as f64;
        self.result(vec![1], vec![T::of(m)], Op::Mean(xi), &[xi])
    }

    /// Mean squared difference over all elements.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ai, bi) = (self.index(a)?, self.index(b)?);
        let (av, bv) = (&self.nodes[ai].value, &self.nodes[bi].value);
        same_shape("mse", av.shape(), bv.shape())?;
        let s: f64 = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(&p, &q)| (p - q).f64().powi(2))
            .sum();
        let m = s / av.numel() as f64;
        self.result(vec![1], vec![T::of(m)], Op::Mse(ai, bi), &[ai, bi])
    }

    // ── normalization and channel plumbing ─────────────────────────────

    /// Normalizes each channel of `x: [B, C, T]` to zero mean and unit
    /// variance. Statistics pool over batch and time, or over time only
    /// when `per_instance`.
    pub fn instance_norm(&mut self, x: Var, epsilon: f64, per_instance: bool) -> Result<Var> {
        let xi = self.index(x)?;
        let xv = &self.nodes[xi].value;
        expect_rank("instance_norm", xv.shape(), 3)?;
        let (batch, channels, time) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
        let map = GroupMap {
            channels,
            time,
            per_instance,
        };
        let groups = map.groups(batch);
        let count = (xv.numel() / groups) as f64;
        let mut mean = vec![0.0f64; groups];
        for (i, v) in xv.data().iter().enumerate() {
            mean[map.group(i)] += v.f64();
        }
        mean.iter_mut().for_each(|m| *m /= count);
        let mut var = vec![0.0f64; groups];
        for (i, v) in xv.data().iter().enumerate() {
            let g = map.group(i);
            var[g] += (v.f64() - mean[g]).powi(2);
        }
        let inv_std: Vec<T> = var
            .iter()
            .map(|s| T::of(1.0 / (s / count + epsilon).sqrt()))
            .collect();
        let xhat: Vec<T> = xv
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let g = map.group(i);
                (v - T::of(mean[g])) * inv_std[g]
            })
            .collect();
        let shape = xv.shape().to_vec();
        self.result(
            shape,
            xhat.clone(),
            Op::InstanceNorm {
                x: xi,
                group_of: map,
                xhat,
                inv_std,
            },
            &[xi],
        )
    }

    /// `x[b,c,t]·scale[b,c] + shift[b,c]`.
    pub fn channel_affine(&mut self, x: Var, scale: Var, shift: Var) -> Result<Var> {
        let (xi, si, hi) = (self.index(x)?, self.index(scale)?, self.index(shift)?);
        let xs = self.nodes[xi].value.shape().to_vec();
        expect_rank("channel_affine", &xs, 3)?;
        same_shape("channel_affine scale", self.nodes[si].value.shape(), &xs[..2])?;
        same_shape("channel_affine shift", self.nodes[hi].value.shape(), &xs[..2])?;
        let time = xs[2];
        let (sv, hv) = (self.nodes[si].value.data(), self.nodes[hi].value.data());
        let data = self.nodes[xi]
            .value
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v * sv[i / time] + hv[i / time])
            .collect();
        self.result(xs, data, Op::ChannelAffine { x: xi, scale: si, shift: hi }, &[xi, si, hi])
    }

    /// Global average over time: `[B, C, T] → [B, C]`.
    pub fn mean_time(&mut self, x: Var) -> Result<Var> {
        let xi = self.index(x)?;
        let xv = &self.nodes[xi].value;
        expect_rank("mean_time", xv.shape(), 3)?;
        let (b, c, t) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
        let data = xv
            .data()
            .chunks(t)
            .map(|row| T::of(row.iter().map(|v| v.f64()).sum::<f64>() / t as f64))
            .collect();
        self.result(vec![b, c], data, Op::MeanTime(xi), &[xi])
    }

    /// Repeats `[B, E]` along a new time axis: `[B, E, time]`.
    pub fn broadcast_time(&mut self, x: Var, time: usize) -> Result<Var> {
        let xi = self.index(x)?;
        let xv = &self.nodes[xi].value;
        expect_rank("broadcast_time", xv.shape(), 2)?;
        let (b, e) = (xv.shape()[0], xv.shape()[1]);
        let data = xv
            .data()
            .iter()
            .flat_map(|&v| std::iter::repeat(v).take(time))
            .collect();
        self.result(vec![b, e, time], data, Op::BroadcastTime(xi), &[xi])
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ai, bi) = (self.index(a)?, self.index(b)?);
        let (av, bv) = (&self.nodes[ai].value, &self.nodes[bi].value);
        expect_rank("concat_channels", av.shape(), 3)?;
        expect_rank("concat_channels", bv.shape(), 3)?;
        let (sa, sb) = (av.shape(), bv.shape());
        if sa[0] != sb[0] || sa[2] != sb[2] {
            return Err(NumericsError::ShapeMismatch {
                op: "concat_channels",
                left: sa.to_vec(),
                right: sb.to_vec(),
            });
        }
        let (batch, time) = (sa[0], sa[2]);
        let mut data = Vec::with_capacity(av.numel() + bv.numel());
        for i in 0..batch {
            data.extend_from_slice(&av.data()[i * sa[1] * time..(i + 1) * sa[1] * time]);
            data.extend_from_slice(&bv.data()[i * sb[1] * time..(i + 1) * sb[1] * time]);
        }
        let shape = vec![batch, sa[1] + sb[1], time];
        self.result(shape, data, Op::ConcatChannels(ai, bi), &[ai, bi])
    }

    /// Row lookup into `table: [K, D]`; the gradient scatters back to rows.
    pub fn gather_rows(&mut self, table: Var, rows: &[usize]) -> Result<Var> {
        let ti = self.index(table)?;
        let tv = &self.nodes[ti].value;
        expect_rank("gather_rows", tv.shape(), 2)?;
        let (k, d) = (tv.shape()[0], tv.shape()[1]);
        if let Some(&bad) = rows.iter().find(|&&r| r >= k) {
            return Err(NumericsError::InvalidArgument {
                op: "gather_rows",
                reason: format!("row {bad} out of range for {k} rows"),
            });
        }
        let mut data = Vec::with_capacity(rows.len() * d);
        for &r in rows {
            data.extend_from_slice(&tv.data()[r * d..(r + 1) * d]);
        }
        let op = Op::GatherRows {
            table: ti,
            rows: rows.to_vec(),
        };
        self.result(vec![rows.len(), d], data, op, &[ti])
    }

    /// `[B, D, T] → [B·T, D]`, one row per frame.
    pub fn to_frames(&mut self, x: Var) -> Result<Var> {
        let xi = self.index(x)?;
        let xv = &self.nodes[xi].value;
        expect_rank("to_frames", xv.shape(), 3)?;
        let (b, d, t) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
        let data = frames_from_bdt(xv.data(), b, d, t);
        self.result(vec![b * t, d], data, Op::ToFrames(xi), &[xi])
    }

    /// `[B·T, D] → [B, D, T]`.
    pub fn from_frames(&mut self, x: Var, batch: usize) -> Result<Var> {
        let xi = self.index(x)?;
        let xv = &self.nodes[xi].value;
        expect_rank("from_frames", xv.shape(), 2)?;
        let (rows, d) = (xv.shape()[0], xv.shape()[1]);
        if batch == 0 || rows % batch != 0 {
            return Err(NumericsError::InvalidArgument {
                op: "from_frames",
                reason: format!("{rows} rows do not split into batch {batch}"),
            });
        }
        let t = rows / batch;
        let data = bdt_from_frames(xv.data(), batch, d, t);
        self.result(vec![batch, d, t], data, Op::FromFrames(xi), &[xi])
    }

    /// Columns `start..start+len` of `x: [R, D]`.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xi = self.index(x)?;
        let xv = &self.nodes[xi].value;
        expect_rank("slice_cols", xv.shape(), 2)?;
        let d = xv.shape()[1];
        if len == 0 || start + len > d {
            return Err(NumericsError::InvalidArgument {
                op: "slice_cols",
                reason: format!("columns {start}..{} out of range for width {d}", start + len),
            });
        }
        let data = xv
            .data()
            .chunks(d)
            .flat_map(|row| row[start..start + len].iter().copied())
            .collect();
        let shape = vec![xv.shape()[0], len];
        self.result(shape, data, Op::SliceCols { x: xi, start }, &[xi])
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let idx = parts.iter().map(|&p| self.index(p)).collect::<Result<Vec<_>>>()?;
        let first = idx.first().ok_or(NumericsError::InvalidArgument {
            op: "concat_cols",
            reason: "no parts".into(),
        })?;
        let rows = self.nodes[*first].value.shape()[0];
        let mut width = 0;
        for &i in &idx {
            let s = self.nodes[i].value.shape();
            expect_rank("concat_cols", s, 2)?;
            if s[0] != rows {
                return Err(NumericsError::ShapeMismatch {
                    op: "concat_cols",
                    left: self.nodes[*first].value.shape().to_vec(),
                    right: s.to_vec(),
                });
            }
            width += s[1];
        }
        let mut data = Vec::with_capacity(rows * width);
        for r in 0..rows {
            for &i in &idx {
                let v = &self.nodes[i].value;
                let w = v.shape()[1];
                data.extend_from_slice(&v.data()[r * w..(r + 1) * w]);
            }
        }
        self.result(vec![rows, width], data, Op::ConcatCols(idx.clone()), &idx)
    }

    // ── gradient routing ───────────────────────────────────────────────

    /// Forward value is exactly `quantized`; the backward pass hands the
    /// incoming gradient to `continuous` unchanged and nothing to `quantized`.
    pub fn straight_through(&mut self, continuous: Var, quantized: Var) -> Result<Var> {
        let (ci, qi) = (self.index(continuous)?, self.index(quantized)?);
        same_shape(
            "straight_through",
            self.nodes[ci].value.shape(),
            self.nodes[qi].value.shape(),
        )?;
        let value = self.nodes[qi].value.detached();
        Ok(self.push(value, Op::StraightThrough(ci), &[ci]))
    }

    /// Stop-gradient: same value, cut from the graph.
    pub fn detach(&mut self, x: Var) -> Result<Var> {
        let xi = self.index(x)?;
        let value = self.nodes[xi].value.detached();
        Ok(self.push(value, Op::Constant, &[]))
    }

    /// Copy of `base` with `src[k]` added at flat position `pos` for every
    /// `(k, pos)` pair. Lets a small probe vector perturb selected entries
    /// of a larger tensor.
    pub fn scatter_add(&mut self, base: Var, src: Var, pairs: &[(usize, usize)]) -> Result<Var> {
        let (bi, si) = (self.index(base)?, self.index(src)?);
        let (n_base, n_src) = (self.nodes[bi].value.numel(), self.nodes[si].value.numel());
        if let Some(&(k, p)) = pairs.iter().find(|&&(k, p)| k >= n_src || p >= n_base) {
            return Err(NumericsError::InvalidArgument {
                op: "scatter_add",
                reason: format!("pair ({k}, {p}) out of range for source {n_src} / base {n_base}"),
            });
        }
        let mut data = self.nodes[bi].value.data().to_vec();
        let src_v = self.nodes[si].value.data();
        for &(k, p) in pairs {
            data[p] += src_v[k];
        }
        let shape = self.nodes[bi].value.shape().to_vec();
        let op = Op::ScatterAdd {
            base: bi,
            src: si,
            pairs: pairs.to_vec(),
        };
        self.result(shape, data, op, &[bi, si])
    }

    // ── reverse sweep ──────────────────────────────────────────────────

    /// Propagates d(loss)/d(·) to every leaf reachable from `loss`, adding
    /// into the leaves' gradient buffers.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let li = self.index(loss)?;
        let ls = self.nodes[li].value.shape();
        if self.nodes[li].value.numel() != 1 {
            return Err(NumericsError::NotScalar(ls.to_vec()));
        }
        let mut adj: Vec<Option<Vec<T>>> = (0..=li).map(|_| None).collect();
        adj[li] = Some(vec![T::one()]);

        for i in (0..=li).rev() {
            let Some(dy) = adj[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            if matches!(self.nodes[i].op, Op::Leaf) {
                self.nodes[i].value.accumulate_grad(&dy);
                continue;
            }
            for (input, g) in self.local_grads(i, &dy) {
                match &mut adj[input] {
                    Some(acc) => add_into(acc, &g),
                    slot @ None => *slot = Some(g),
                }
            }
        }
        Ok(())
    }

    fn wants(&self, i: usize) -> bool {
        self.nodes[i].requires_grad
    }

    fn zeros_like(&self, i: usize) -> Vec<T> {
        vec![T::zero(); self.nodes[i].value.numel()]
    }

    /// Vector-Jacobian products of node `i` for inputs that need gradients.
    fn local_grads(&self, i: usize, dy: &[T]) -> Vec<(usize, Vec<T>)> {
        let node = &self.nodes[i];
        let val = |j: usize| self.nodes[j].value.data();
        let mut out = Vec::new();
        match &node.op {
            Op::Leaf | Op::Constant => {}
            Op::Conv1d { x, w, b, geom, cols } => {
                let mut dx = self.wants(*x).then(|| self.zeros_like(*x));
                let mut dw = self.wants(*w).then(|| self.zeros_like(*w));
                let mut db = self.wants(*b).then(|| self.zeros_like(*b));
                conv::conv1d_backward(
                    geom,
                    val(*w),
                    cols,
                    dy,
                    dx.as_deref_mut(),
                    dw.as_deref_mut(),
                    db.as_deref_mut(),
                );
                out.extend(dx.map(|g| (*x, g)));
                out.extend(dw.map(|g| (*w, g)));
                out.extend(db.map(|g| (*b, g)));
            }
            Op::ConvTranspose1d { x, w, b, geom } => {
                let mut dx = self.wants(*x).then(|| self.zeros_like(*x));
                let mut dw = self.wants(*w).then(|| self.zeros_like(*w));
                let mut db = self.wants(*b).then(|| self.zeros_like(*b));
                conv::conv_transpose1d_backward(
                    geom,
                    val(*x),
                    val(*w),
                    dy,
                    dx.as_deref_mut(),
                    dw.as_deref_mut(),
                    db.as_deref_mut(),
                );
                out.extend(dx.map(|g| (*x, g)));
                out.extend(dw.map(|g| (*w, g)));
                out.extend(db.map(|g| (*b, g)));
            }
            Op::Linear { x, w, b } => {
                let xs = self.nodes[*x].value.shape();
                let (batch, d_in) = (xs[0], xs[1]);
                let d_out = self.nodes[*w].value.shape()[0];
                if self.wants(*x) {
                    let mut dx = vec![T::zero(); batch * d_in];
                    gemm(
                        Mat::new(dy, batch, d_out),
                        Mat::new(val(*w), d_out, d_in),
                        &mut dx,
                        false,
                    );
                    out.push((*x, dx));
                }
                if self.wants(*w) {
                    let mut dw = vec![T::zero(); d_out * d_in];
                    gemm(
                        Mat::new(dy, batch, d_out).t(),
                        Mat::new(val(*x), batch, d_in),
                        &mut dw,
                        false,
                    );
                    out.push((*w, dw));
                }
                if self.wants(*b) {
                    let mut db = vec![T::zero(); d_out];
                    for row in dy.chunks(d_out) {
                        add_into(&mut db, row);
                    }
                    out.push((*b, db));
                }
            }
            Op::Relu(x) => {
                let g = val(*x)
                    .iter()
                    .zip(dy)
                    .map(|(&v, &d)| if v > T::zero() { d } else { T::zero() })
                    .collect();
                out.push((*x, g));
            }
            Op::Exp(x) => {
                let g = node.value.data().iter().zip(dy).map(|(&y, &d)| y * d).collect();
                out.push((*x, g));
            }
            Op::Add(a, b) => {
                if self.wants(*a) {
                    out.push((*a, dy.to_vec()));
                }
                if self.wants(*b) {
                    out.push((*b, dy.to_vec()));
                }
            }
            Op::Sub(a, b) => {
                if self.wants(*a) {
                    out.push((*a, dy.to_vec()));
                }
                if self.wants(*b) {
                    out.push((*b, dy.iter().map(|&d| -d).collect()));
                }
            }
            Op::Mul(a, b) => {
                if self.wants(*a) {
                    out.push((*a, dy.iter().zip(val(*b)).map(|(&d, &q)| d * q).collect()));
                }
                if self.wants(*b) {
                    out.push((*b, dy.iter().zip(val(*a)).map(|(&d, &p)| d * p).collect()));
                }
            }
            Op::Scale(x, f) => out.push((*x, dy.iter().map(|&d| d * *f).collect())),
            Op::Sum(x) => out.push((*x, vec![dy[0]; self.nodes[*x].value.numel()])),
            Op::Mean(x) => {
                let n = self.nodes[*x].value.numel();
                out.push((*x, vec![dy[0] / T::of(n as f64); n]));
            }
            Op::Mse(a, b) => {
                let n = self.nodes[*a].value.numel();
                let k = dy[0] * T::of(2.0 / n as f64);
                let diff: Vec<T> = val(*a).iter().zip(val(*b)).map(|(&p, &q)| (p - q) * k).collect();
                if self.wants(*b) {
                    out.push((*b, diff.iter().map(|&d| -d).collect()));
                }
                if self.wants(*a) {
                    out.push((*a, diff));
                }
            }
            Op::InstanceNorm {
                x,
                group_of,
                xhat,
                inv_std,
            } => {
                let groups = inv_std.len();
                let mut sum_dy = vec![0.0f64; groups];
                let mut sum_dy_xhat = vec![0.0f64; groups];
                for (idx, (&d, &h)) in dy.iter().zip(xhat).enumerate() {
                    let g = group_of.group(idx);
                    sum_dy[g] += d.f64();
                    sum_dy_xhat[g] += (d * h).f64();
                }
                let count = (dy.len() / groups) as f64;
                let g = dy
                    .iter()
                    .zip(xhat)
                    .enumerate()
                    .map(|(idx, (&d, &h))| {
                        let gi = group_of.group(idx);
                        let inner = d.f64() - sum_dy[gi] / count - h.f64() * sum_dy_xhat[gi] / count;
                        T::of(inner) * inv_std[gi]
                    })
                    .collect();
                out.push((*x, g));
            }
            Op::ChannelAffine { x, scale, shift } => {
                let time = node.value.shape()[2];
                let sv = val(*scale);
                if self.wants(*x) {
                    out.push((*x, dy.iter().enumerate().map(|(k, &d)| d * sv[k / time]).collect()));
                }
                if self.wants(*scale) {
                    let g = dy
                        .chunks(time)
                        .zip(val(*x).chunks(time))
                        .map(|(d, xv)| d.iter().zip(xv).map(|(&a, &b)| a * b).sum())
                        .collect();
                    out.push((*scale, g));
                }
                if self.wants(*shift) {
                    out.push((*shift, dy.chunks(time).map(|d| d.iter().copied().sum()).collect()));
                }
            }
            Op::MeanTime(x) => {
                let time = self.nodes[*x].value.shape()[2];
                let inv = T::of(1.0 / time as f64);
                let g = dy
                    .iter()
                    .flat_map(|&d| std::iter::repeat(d * inv).take(time))
                    .collect();
                out.push((*x, g));
            }
            Op::BroadcastTime(x) => {
                let time = node.value.shape()[2];
                out.push((*x, dy.chunks(time).map(|d| d.iter().copied().sum()).collect()));
            }
            Op::ConcatChannels(a, b) => {
                let (sa, sb) = (self.nodes[*a].value.shape(), self.nodes[*b].value.shape());
                let (batch, time) = (sa[0], sa[2]);
                let (na, nb) = (sa[1] * time, sb[1] * time);
                let mut ga = Vec::with_capacity(batch * na);
                let mut gb = Vec::with_capacity(batch * nb);
                for chunk in dy.chunks(na + nb) {
                    ga.extend_from_slice(&chunk[..na]);
                    gb.extend_from_slice(&chunk[na..]);
                }
                if self.wants(*a) {
                    out.push((*a, ga));
                }
                if self.wants(*b) {
                    out.push((*b, gb));
                }
            }
            Op::GatherRows { table, rows } => {
                let d = self.nodes[*table].value.shape()[1];
                let mut g = self.zeros_like(*table);
                for (r, chunk) in rows.iter().zip(dy.chunks(d)) {
                    add_into(&mut g[r * d..(r + 1) * d], chunk);
                }
                out.push((*table, g));
            }
            Op::ToFrames(x) => {
                let s = self.nodes[*x].value.shape();
                out.push((*x, bdt_from_frames(dy, s[0], s[1], s[2])));
            }
            Op::FromFrames(x) => {
                let s = node.value.shape();
                out.push((*x, frames_from_bdt(dy, s[0], s[1], s[2])));
            }
            Op::SliceCols { x, start } => {
                let d = self.nodes[*x].value.shape()[1];
                let len = node.value.shape()[1];
                let mut g = self.zeros_like(*x);
                for (row, chunk) in g.chunks_mut(d).zip(dy.chunks(len)) {
                    row[*start..start + len].copy_from_slice(chunk);
                }
                out.push((*x, g));
            }
            Op::ConcatCols(parts) => {
                let width = node.value.shape()[1];
                let mut offset = 0;
                for &p in parts {
                    let w = self.nodes[p].value.shape()[1];
                    if self.wants(p) {
                        let g = dy
                            .chunks(width)
                            .flat_map(|row| row[offset..offset + w].iter().copied())
                            .collect();
                        out.push((p, g));
                    }
                    offset += w;
                }
            }
            Op::StraightThrough(c) => out.push((*c, dy.to_vec())),
            Op::ScatterAdd { base, src, pairs } => {
                if self.wants(*src) {
                    let mut g = self.zeros_like(*src);
                    for &(k, p) in pairs {
                        g[k] += dy[p];
                    }
                    out.push((*src, g));
                }
                if self.wants(*base) {
                    out.push((*base, dy.to_vec()));
                }
            }
        }
        out.retain(|(j, _)| self.wants(*j));
        out
    }
}

fn frames_from_bdt<T: Element>(x: &[T], b: usize, d: usize, t: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for bi in 0..b {
        for di in 0..d {
            for ti in 0..t {
                out[(bi * t + ti) * d + di] = x[(bi * d + di) * t + ti];
            }
        }
    }
    out
}

fn bdt_from_frames<T: Element>(x: &[T], b: usize, d: usize, t: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for bi in 0..b {
        for di in 0..d {
            for ti in 0..t {
                out[(bi * d + di) * t + ti] = x[(bi * t + ti) * d + di];
            }
        }
    }
    out
}
