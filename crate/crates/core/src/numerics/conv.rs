//! 1-D convolution kernels on flat buffers. Layout is `[batch, channel, time]`.

use super::gemm::{gemm, Mat};
use super::Element;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Padding {
    Zeros(usize),
    /// Wrap-around padding; keeps time-tiled inputs producing tiled outputs.
    Circular(usize),
}

impl Padding {
    pub fn amount(self) -> usize {
        match self {
            Padding::Zeros(p) | Padding::Circular(p) => p,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub batch: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub t_in: usize,
    pub t_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: Padding,
}

impl ConvGeom {
    /// Source time index feeding output frame `t` through tap `j`.
    fn source(&self, t: usize, j: usize) -> Option<usize> {
        let pos = (t * self.stride + j) as isize - self.padding.amount() as isize;
        match self.padding {
            Padding::Zeros(_) => (pos >= 0 && (pos as usize) < self.t_in).then_some(pos as usize),
            Padding::Circular(_) => Some(pos.rem_euclid(self.t_in as isize) as usize),
        }
    }

    pub fn cols_len(&self) -> usize {
        self.c_in * self.kernel * self.t_out
    }
}

/// Unfolds batch element `b` into columns `b·t_out..(b+1)·t_out` of the
/// `[c_in·k, batch·t_out]` matrix `cols`.
fn im2col<T: Element>(g: &ConvGeom, b: usize, x_b: &[T], cols: &mut [T]) {
    let width = g.batch * g.t_out;
    for ci in 0..g.c_in {
        let row = &x_b[ci * g.t_in..(ci + 1) * g.t_in];
        for j in 0..g.kernel {
            let dst = &mut cols[(ci * g.kernel + j) * width + b * g.t_out..][..g.t_out];
            for (t, d) in dst.iter_mut().enumerate() {
                *d = g.source(t, j).map_or(T::zero(), |s| row[s]);
            }
        }
    }
}

fn col2im<T: Element>(g: &ConvGeom, b: usize, cols: &[T], dx_b: &mut [T]) {
    let width = g.batch * g.t_out;
    for ci in 0..g.c_in {
        let row = &mut dx_b[ci * g.t_in..(ci + 1) * g.t_in];
        for j in 0..g.kernel {
            let src = &cols[(ci * g.kernel + j) * width + b * g.t_out..][..g.t_out];
            for (t, &v) in src.iter().enumerate() {
                if let Some(s) = g.source(t, j) {
                    row[s] += v;
                }
            }
        }
    }
}

/// `[batch, c, t] → [c, batch·t]`.
fn to_channel_major<T: Element>(x: &[T], batch: usize, c: usize, t: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for b in 0..batch {
        for ch in 0..c {
            out[ch * batch * t + b * t..][..t].copy_from_slice(&x[(b * c + ch) * t..][..t]);
        }
    }
    out
}

/// `[c, batch·t] → [batch, c, t]`.
fn from_channel_major<T: Element>(x: &[T], batch: usize, c: usize, t: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for b in 0..batch {
        for ch in 0..c {
            out[(b * c + ch) * t..][..t].copy_from_slice(&x[ch * batch * t + b * t..][..t]);
        }
    }
    out
}

/// Returns the output and the unfolded input columns kept for backward.
pub(crate) fn conv1d_forward<T: Element>(
    g: &ConvGeom,
    x: &[T],
    w: &[T],
    bias: &[T],
) -> (Vec<T>, Vec<T>) {
    let ck = g.c_in * g.kernel;
    let width = g.batch * g.t_out;
    let mut cols = vec![T::zero(); g.batch * g.cols_len()];
    for b in 0..g.batch {
        im2col(g, b, &x[b * g.c_in * g.t_in..][..g.c_in * g.t_in], &mut cols);
    }
    let mut out_cm = vec![T::zero(); g.c_out * width];
    gemm(Mat::new(w, g.c_out, ck), Mat::new(&cols, ck, width), &mut out_cm, false);
    for (co, row) in out_cm.chunks_mut(width).enumerate() {
        row.iter_mut().for_each(|v| *v += bias[co]);
    }
    (from_channel_major(&out_cm, g.batch, g.c_out, g.t_out), cols)
}

/// Accumulates into whichever of `dx`, `dw`, `db` are requested.
pub(crate) fn conv1d_backward<T: Element>(
    g: &ConvGeom,
    w: &[T],
    cols: &[T],
    dy: &[T],
    dx: Option<&mut [T]>,
    dw: Option<&mut [T]>,
    db: Option<&mut [T]>,
) {
    let ck = g.c_in * g.kernel;
    let width = g.batch * g.t_out;
    let dy_cm = to_channel_major(dy, g.batch, g.c_out, g.t_out);
    if let Some(dw) = dw {
        gemm(
            Mat::new(&dy_cm, g.c_out, width),
            Mat::new(cols, ck, width).t(),
            dw,
            true,
        );
    }
    if let Some(db) = db {
        for (co, row) in dy_cm.chunks(width).enumerate() {
            db[co] += row.iter().copied().sum::<T>();
        }
    }
    if let Some(dx) = dx {
        let mut dcols = vec![T::zero(); ck * width];
        gemm(
            Mat::new(w, g.c_out, ck).t(),
            Mat::new(&dy_cm, g.c_out, width),
            &mut dcols,
            false,
        );
        for b in 0..g.batch {
            col2im(g, b, &dcols, &mut dx[b * g.c_in * g.t_in..][..g.c_in * g.t_in]);
        }
    }
}

/// Geometry of a length-exact transposed convolution: output is `t_in·stride`
/// frames, obtained by cropping `kernel − stride` frames from the full output.
#[derive(Clone, Copy, Debug)]
pub(crate) struct UpGeom {
    pub batch: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub t_in: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl UpGeom {
    pub fn t_out(&self) -> usize {
        self.t_in * self.stride
    }

    fn crop_left(&self) -> usize {
        (self.kernel - self.stride) / 2
    }

    fn target(&self, t: usize, j: usize) -> Option<usize> {
        let pos = (t * self.stride + j) as isize - self.crop_left() as isize;
        (pos >= 0 && (pos as usize) < self.t_out()).then_some(pos as usize)
    }
}

/// Weight layout is `[c_in, c_out, kernel]`.
pub(crate) fn conv_transpose1d_forward<T: Element>(
    g: &UpGeom,
    x: &[T],
    w: &[T],
    bias: &[T],
) -> Vec<T> {
    let ok = g.c_out * g.kernel;
    let t_out = g.t_out();
    let width = g.batch * g.t_in;
    let x_cm = to_channel_major(x, g.batch, g.c_in, g.t_in);
    let mut cols = vec![T::zero(); ok * width];
    gemm(Mat::new(w, g.c_in, ok).t(), Mat::new(&x_cm, g.c_in, width), &mut cols, false);
    let mut out = vec![T::zero(); g.batch * g.c_out * t_out];
    for b in 0..g.batch {
        let out_b = &mut out[b * g.c_out * t_out..][..g.c_out * t_out];
        for co in 0..g.c_out {
            let row = &mut out_b[co * t_out..][..t_out];
            row.iter_mut().for_each(|v| *v = bias[co]);
            for j in 0..g.kernel {
                let src = &cols[(co * g.kernel + j) * width + b * g.t_in..][..g.t_in];
                for (t, &v) in src.iter().enumerate() {
                    if let Some(p) = g.target(t, j) {
                        row[p] += v;
                    }
                }
            }
        }
    }
    out
}

pub(crate) fn conv_transpose1d_backward<T: Element>(
    g: &UpGeom,
    x: &[T],
    w: &[T],
    dy: &[T],
    dx: Option<&mut [T]>,
    dw: Option<&mut [T]>,
    db: Option<&mut [T]>,
) {
    let ok = g.c_out * g.kernel;
    let t_out = g.t_out();
    let width = g.batch * g.t_in;
    if dx.is_some() || dw.is_some() {
        let mut dcols = vec![T::zero(); ok * width];
        for b in 0..g.batch {
            let dy_b = &dy[b * g.c_out * t_out..][..g.c_out * t_out];
            for co in 0..g.c_out {
                let row = &dy_b[co * t_out..][..t_out];
                for j in 0..g.kernel {
                    let dst = &mut dcols[(co * g.kernel + j) * width + b * g.t_in..][..g.t_in];
                    for (t, d) in dst.iter_mut().enumerate() {
                        *d = g.target(t, j).map_or(T::zero(), |p| row[p]);
                    }
                }
            }
        }
        if let Some(dx) = dx {
            let mut dx_cm = vec![T::zero(); g.c_in * width];
            gemm(Mat::new(w, g.c_in, ok), Mat::new(&dcols, ok, width), &mut dx_cm, false);
            let back = from_channel_major(&dx_cm, g.batch, g.c_in, g.t_in);
            dx.iter_mut().zip(back).for_each(|(a, b)| *a += b);
        }
        if let Some(dw) = dw {
            let x_cm = to_channel_major(x, g.batch, g.c_in, g.t_in);
            gemm(Mat::new(&x_cm, g.c_in, width), Mat::new(&dcols, ok, width).t(), dw, true);
        }
    }
    if let Some(db) = db {
        for b in 0..g.batch {
            let dy_b = &dy[b * g.c_out * t_out..][..g.c_out * t_out];
            for (co, row) in dy_b.chunks(t_out).enumerate() {
                db[co] += row.iter().copied().sum::<T>();
            }
        }
    }
}
