//! Slice-level forward and backward kernels.
//!
//! Layouts are row-major: activations are `batch x channels x time`, conv weights
//! `out x in x kernel`, linear weights `out x in`. Every kernel is deterministic;
//! accumulation order depends only on shapes.

use super::Scalar;

/// Dimensions of a 1-D convolution at stride 1 with SAME padding.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvDims {
    pub batch: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub length: usize,
    pub kernel: usize,
    pub dilation: usize,
}

impl ConvDims {
    pub fn effective_kernel(&self) -> usize {
        self.dilation * (self.kernel - 1) + 1
    }

    /// Zeros added before the signal; the remaining `effective - 1 - left` go after it.
    pub fn pad_left(&self) -> usize {
        (self.effective_kernel() - 1) / 2
    }

    /// Offset of tap `j` relative to the output position, and the valid output range.
    #[inline]
    fn tap(&self, j: usize) -> (isize, usize, usize) {
        let off = (j * self.dilation) as isize - self.pad_left() as isize;
        let len = self.length as isize;
        let lo = (-off).clamp(0, len) as usize;
        let hi = (len - off).clamp(0, len) as usize;
        (off, lo, hi.max(lo))
    }
}

/// `bias` may be empty, meaning no bias term.
pub fn conv1d_forward<T: Scalar>(x: &[T], w: &[T], bias: &[T], d: &ConvDims) -> Vec<T> {
    let (l, k) = (d.length, d.kernel);
    let mut out = vec![T::zero(); d.batch * d.out_channels * l];
    for b in 0..d.batch {
        for o in 0..d.out_channels {
            let row = &mut out[(b * d.out_channels + o) * l..][..l];
            let b0 = bias.get(o).copied().unwrap_or_else(T::zero);
            row.iter_mut().for_each(|v| *v = b0);
            for c in 0..d.in_channels {
                let xrow = &x[(b * d.in_channels + c) * l..][..l];
                let wrow = &w[(o * d.in_channels + c) * k..][..k];
                for (j, &wv) in wrow.iter().enumerate() {
                    let (off, lo, hi) = d.tap(j);
                    if lo == hi {
                        continue;
                    }
                    let src = &xrow[(lo as isize + off) as usize..(hi as isize + off) as usize];
                    for (y, &xv) in row[lo..hi].iter_mut().zip(src) {
                        *y += wv * xv;
                    }
                }
            }
        }
    }
    out
}

/// Vector-Jacobian products of [`conv1d_forward`]: `(d_input, d_weight, d_bias)`.
/// The input gradient is skipped when `want_input` is false.
pub fn conv1d_backward<T: Scalar>(
    x: &[T],
    w: &[T],
    dy: &[T],
    d: &ConvDims,
    want_input: bool,
) -> (Option<Vec<T>>, Vec<T>, Vec<T>) {
    let (l, k) = (d.length, d.kernel);
    let mut dx = want_input.then(|| vec![T::zero(); x.len()]);
    let mut dw = vec![T::zero(); w.len()];
    let mut db = vec![T::zero(); d.out_channels];
    for b in 0..d.batch {
        for o in 0..d.out_channels {
            let grow = &dy[(b * d.out_channels + o) * l..][..l];
            db[o] += grow.iter().copied().sum::<T>();
            for c in 0..d.in_channels {
                let xrow = &x[(b * d.in_channels + c) * l..][..l];
                let wbase = (o * d.in_channels + c) * k;
                for j in 0..k {
                    let (off, lo, hi) = d.tap(j);
                    if lo == hi {
                        continue;
                    }
                    let span = (lo as isize + off) as usize..(hi as isize + off) as usize;
                    let mut acc = T::zero();
                    for (&g, &xv) in grow[lo..hi].iter().zip(&xrow[span.clone()]) {
                        acc += g * xv;
                    }
                    dw[wbase + j] += acc;
                    if let Some(dx) = dx.as_mut() {
                        let wv = w[wbase + j];
                        let dxrow = &mut dx[(b * d.in_channels + c) * l..][..l];
                        for (dxv, &g) in dxrow[span].iter_mut().zip(&grow[lo..hi]) {
                            *dxv += wv * g;
                        }
                    }
                }
            }
        }
    }
    (dx, dw, db)
}

/// Non-overlapping max pooling with stride equal to the window. Returns the pooled
/// values and, per output, the flat input index of the first maximum.
pub fn maxpool1d_forward<T: Scalar>(
    x: &[T],
    rows: usize,
    length: usize,
    window: usize,
) -> (Vec<T>, Vec<usize>) {
    let out_len = length / window;
    let mut out = Vec::with_capacity(rows * out_len);
    let mut argmax = Vec::with_capacity(rows * out_len);
    for r in 0..rows {
        for t in 0..out_len {
            let start = r * length + t * window;
            let mut best = start;
            for i in start + 1..start + window {
                if x[i] > x[best] {
                    best = i;
                }
            }
            out.push(x[best]);
            argmax.push(best);
        }
    }
    (out, argmax)
}

pub fn scatter_argmax<T: Scalar>(dy: &[T], argmax: &[usize], input_len: usize) -> Vec<T> {
    let mut dx = vec![T::zero(); input_len];
    for (&g, &i) in dy.iter().zip(argmax) {
        dx[i] += g;
    }
    dx
}

/// Per-channel statistics of a training-mode batch normalisation.
#[derive(Clone, Debug)]
pub struct NormStats<T> {
    pub mean: Vec<T>,
    /// Biased (population) variance.
    pub var: Vec<T>,
    pub inv_std: Vec<T>,
}

/// Batch statistics over (batch, time) for each channel, accumulated in f64.
pub fn batch_stats<T: Scalar>(
    x: &[T],
    batch: usize,
    channels: usize,
    length: usize,
    eps: f64,
) -> NormStats<T> {
    let n = (batch * length) as f64;
    let mut mean = Vec::with_capacity(channels);
    let mut var = Vec::with_capacity(channels);
    let mut inv_std = Vec::with_capacity(channels);
    for c in 0..channels {
        let rows = (0..batch).map(|b| &x[(b * channels + c) * length..][..length]);
        let sum: f64 = rows.clone().flatten().map(|v| v.as_f64()).sum();
        let mu = sum / n;
        let sq: f64 = rows
            .flatten()
            .map(|v| {
                let d = v.as_f64() - mu;
                d * d
            })
            .sum();
        let sigma2 = sq / n;
        mean.push(T::from_f64(mu));
        var.push(T::from_f64(sigma2));
        inv_std.push(T::from_f64(1.0 / (sigma2 + eps).sqrt()));
    }
    NormStats { mean, var, inv_std }
}

/// `y = gamma * (x - mean) * inv_std + beta`; returns `(y, xhat)`.
pub fn normalize<T: Scalar>(
    x: &[T],
    channels: usize,
    length: usize,
    mean: &[T],
    inv_std: &[T],
    gamma: &[T],
    beta: &[T],
) -> (Vec<T>, Vec<T>) {
    let mut xhat = Vec::with_capacity(x.len());
    let mut y = Vec::with_capacity(x.len());
    for (row, chunk) in x.chunks(length).enumerate() {
        let c = row % channels;
        for &v in chunk {
            let h = (v - mean[c]) * inv_std[c];
            xhat.push(h);
            y.push(gamma[c] * h + beta[c]);
        }
    }
    (y, xhat)
}

/// Gradients of γ and β shared by both normalisation modes.
pub fn norm_affine_backward<T: Scalar>(
    dy: &[T],
    xhat: &[T],
    channels: usize,
    length: usize,
) -> (Vec<T>, Vec<T>) {
    let mut dgamma = vec![T::zero(); channels];
    let mut dbeta = vec![T::zero(); channels];
    for (row, (g, h)) in dy.chunks(length).zip(xhat.chunks(length)).enumerate() {
        let c = row % channels;
        for (&gv, &hv) in g.iter().zip(h) {
            dgamma[c] += gv * hv;
            dbeta[c] += gv;
        }
    }
    (dgamma, dbeta)
}

/// Input gradient through batch statistics (training mode).
pub fn batchnorm_train_input_backward<T: Scalar>(
    dy: &[T],
    xhat: &[T],
    gamma: &[T],
    inv_std: &[T],
    batch: usize,
    channels: usize,
    length: usize,
) -> Vec<T> {
    let n = T::from_f64((batch * length) as f64);
    let (sum_dy, sum_dy_xhat) = {
        let (dg, db) = norm_affine_backward(dy, xhat, channels, length);
        (db, dg)
    };
    let mut dx = Vec::with_capacity(dy.len());
    for (row, (g, h)) in dy.chunks(length).zip(xhat.chunks(length)).enumerate() {
        let c = row % channels;
        let scale = gamma[c] * inv_std[c] / n;
        for (&gv, &hv) in g.iter().zip(h) {
            dx.push(scale * (n * gv - sum_dy[c] - hv * sum_dy_xhat[c]));
        }
    }
    dx
}

pub fn linear_forward<T: Scalar>(
    x: &[T],
    w: &[T],
    bias: &[T],
    batch: usize,
    inputs: usize,
    outputs: usize,
) -> Vec<T> {
    let mut out = Vec::with_capacity(batch * outputs);
    for xrow in x.chunks(inputs).take(batch) {
        for (m, wrow) in w.chunks(inputs).enumerate() {
            let mut acc = bias[m];
            for (&a, &b) in xrow.iter().zip(wrow) {
                acc += a * b;
            }
            out.push(acc);
        }
    }
    out
}

/// `(d_input, d_weight, d_bias)` of [`linear_forward`].
pub fn linear_backward<T: Scalar>(
    x: &[T],
    w: &[T],
    dy: &[T],
    batch: usize,
    inputs: usize,
    outputs: usize,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let mut dx = vec![T::zero(); batch * inputs];
    let mut dw = vec![T::zero(); outputs * inputs];
    let mut db = vec![T::zero(); outputs];
    for i in 0..batch {
        let xrow = &x[i * inputs..][..inputs];
        let dxrow = &mut dx[i * inputs..][..inputs];
        for m in 0..outputs {
            let g = dy[i * outputs + m];
            db[m] += g;
            let wrow = &w[m * inputs..][..inputs];
            let dwrow = &mut dw[m * inputs..][..inputs];
            for n in 0..inputs {
                dxrow[n] += g * wrow[n];
                dwrow[n] += g * xrow[n];
            }
        }
    }
    (dx, dw, db)
}

pub fn log_softmax_forward<T: Scalar>(x: &[T], classes: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(x.len());
    for row in x.chunks(classes) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
        out.extend(row.iter().map(|&v| v - lse));
    }
    out
}

pub fn log_softmax_backward<T: Scalar>(logp: &[T], dy: &[T], classes: usize) -> Vec<T> {
    let mut dx = Vec::with_capacity(dy.len());
    for (lrow, grow) in logp.chunks(classes).zip(dy.chunks(classes)) {
        let total: T = grow.iter().copied().sum();
        dx.extend(lrow.iter().zip(grow).map(|(&l, &g)| g - l.exp() * total));
    }
    dx
}
