//! Layer math for the 1-D network engine.
//!
//! Feature maps are `[batch, channels, length]`; flattened features are
//! `[batch, features]`. Convolutions use stride 1 with 'same' zero padding
//! and are evaluated as im2col + GEMM in batch chunks to bound memory.
//! Everything is f64 and sequentially ordered, so results are bit-stable.

use ndarray::{s, Array1, Array2, Array3, Axis};

/// Elements per im2col buffer (~32 MB of f64).
const IM2COL_CAP: usize = 1 << 22;

pub(crate) const BN_EPS: f64 = 1e-5;
pub(crate) const BN_MOMENTUM: f64 = 0.9;

pub(crate) const SELU_LAMBDA: f64 = 1.050_700_987_355_480_5;
pub(crate) const SELU_ALPHA: f64 = 1.673_263_242_354_377_2;

// ---------------------------------------------------------------------------
// Conv1D, stride 1, 'same' zero padding
// ---------------------------------------------------------------------------

/// Left padding so that output length equals input length. The remaining
/// `kernel / 2` zeros pad on the right.
#[inline]
fn pad_left(kernel: usize) -> usize {
    (kernel - 1) / 2
}

/// Unrolls `x[b0..b1]` into im2col rows: row `(b - b0) * L + i` holds the
/// receptive field of output position `i`, channel-major then tap.
fn im2col_chunk(x: &Array3<f64>, b0: usize, b1: usize, kernel: usize) -> Array2<f64> {
    let (_, c, l) = x.dim();
    let pl = pad_left(kernel);
    let row_w = c * kernel;
    let mut cols = Array2::<f64>::zeros(((b1 - b0) * l, row_w));
    let cols_slice = cols.as_slice_mut().expect("freshly allocated is contiguous");
    for (bi, b) in (b0..b1).enumerate() {
        for ch in 0..c {
            let xrow = x.slice(s![b, ch, ..]);
            let xs = xrow.as_slice().expect("standard layout");
            for i in 0..l {
                let t0 = pl.saturating_sub(i);
                let t1 = kernel.min(l + pl - i);
                if t1 <= t0 {
                    continue;
                }
                let src0 = i + t0 - pl;
                let dst = (bi * l + i) * row_w + ch * kernel;
                cols_slice[dst + t0..dst + t1].copy_from_slice(&xs[src0..src0 + (t1 - t0)]);
            }
        }
    }
    cols
}

fn conv_chunk_size(l: usize, c: usize, k: usize) -> usize {
    (IM2COL_CAP / (l * c * k).max(1)).max(1)
}

/// Cross-correlation of each filter with the input: `w` is `[F, C, K]`,
/// output is `[B, F, L]`.
pub(crate) fn conv1d_forward(x: &Array3<f64>, w: &Array3<f64>, b: &Array1<f64>) -> Array3<f64> {
    let (bsz, c, l) = x.dim();
    let (f, _, k) = w.dim();
    let w_flat = w.to_shape((f, c * k)).expect("weights contiguous");
    let mut out = Array3::<f64>::zeros((bsz, f, l));
    let chunk = conv_chunk_size(l, c, k);
    let mut b0 = 0;
    while b0 < bsz {
        let b1 = (b0 + chunk).min(bsz);
        let cols = im2col_chunk(x, b0, b1, k);
        let prod = cols.dot(&w_flat.t()); // [(b1-b0)*L, F]
        for (bi, bb) in (b0..b1).enumerate() {
            for fi in 0..f {
                let bias = b[fi];
                let mut out_row = out.slice_mut(s![bb, fi, ..]);
                for i in 0..l {
                    out_row[i] = prod[[bi * l + i, fi]] + bias;
                }
            }
        }
        b0 = b1;
    }
    out
}

/// Gradients of the convolution. Returns `(d_weights, d_bias, d_input)`.
pub(crate) fn conv1d_backward(
    x: &Array3<f64>,
    w: &Array3<f64>,
    d_out: &Array3<f64>,
) -> (Array3<f64>, Array1<f64>, Array3<f64>) {
    let (bsz, c, l) = x.dim();
    let (f, _, k) = w.dim();
    let pl = pad_left(k);
    let w_flat = w.to_shape((f, c * k)).expect("weights contiguous");
    let mut dw_flat = Array2::<f64>::zeros((f, c * k));
    let mut db = Array1::<f64>::zeros(f);
    let mut dx = Array3::<f64>::zeros((bsz, c, l));

    let chunk = conv_chunk_size(l, c, k);
    let mut b0 = 0;
    while b0 < bsz {
        let b1 = (b0 + chunk).min(bsz);
        let nb = b1 - b0;
        let cols = im2col_chunk(x, b0, b1, k);
        // d_out transposed to [(nb)*L, F]
        let mut dof = Array2::<f64>::zeros((nb * l, f));
        for (bi, bb) in (b0..b1).enumerate() {
            for fi in 0..f {
                let src = d_out.slice(s![bb, fi, ..]);
                for i in 0..l {
                    dof[[bi * l + i, fi]] = src[i];
                }
            }
        }
        dw_flat += &dof.t().dot(&cols);
        db += &dof.sum_axis(Axis(0));

        // scatter-add dcols back onto the input (col2im)
        let dcols = dof.dot(&w_flat);
        let dcols_slice = dcols.as_slice().expect("contiguous");
        let row_w = c * k;
        for (bi, bb) in (b0..b1).enumerate() {
            for ch in 0..c {
                let mut dxrow = dx.slice_mut(s![bb, ch, ..]);
                let dxs = dxrow.as_slice_mut().expect("standard layout");
                for i in 0..l {
                    let t0 = pl.saturating_sub(i);
                    let t1 = k.min(l + pl - i);
                    if t1 <= t0 {
                        continue;
                    }
                    let src = (bi * l + i) * row_w + ch * k;
                    let dst0 = i + t0 - pl;
                    for t in t0..t1 {
                        dxs[dst0 + (t - t0)] += dcols_slice[src + t];
                    }
                }
            }
        }
        b0 = b1;
    }

    let dw = dw_flat
        .into_shape_with_order((f, c, k))
        .expect("shape product unchanged");
    (dw, db, dx)
}

// ---------------------------------------------------------------------------
// Pooling
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum PoolKind {
    Average,
    Max,
}

/// Number of complete windows of `size` advancing by `stride`; partial
/// final windows are dropped. Holds for stride > size as well.
pub fn pool_out_len(length: usize, size: usize, stride: usize) -> Option<usize> {
    if length >= size {
        Some((length - size) / stride + 1)
    } else {
        None
    }
}

/// Pools windows; for max pooling also returns the winning input index per
/// output element (first maximum on ties), flattened `[b][c][o]`.
pub(crate) fn pool_forward(
    x: &Array3<f64>,
    kind: PoolKind,
    size: usize,
    stride: usize,
) -> (Array3<f64>, Option<Vec<usize>>) {
    let (bsz, c, l) = x.dim();
    let lo = pool_out_len(l, size, stride).expect("validated at build time");
    let mut out = Array3::<f64>::zeros((bsz, c, lo));
    let mut argmax = matches!(kind, PoolKind::Max).then(|| vec![0usize; bsz * c * lo]);
    for b in 0..bsz {
        for ch in 0..c {
            let xrow = x.slice(s![b, ch, ..]);
            let xs = xrow.as_slice().expect("standard layout");
            for o in 0..lo {
                let start = o * stride;
                let window = &xs[start..start + size];
                match kind {
                    PoolKind::Average => {
                        out[[b, ch, o]] = window.iter().sum::<f64>() / size as f64;
                    }
                    PoolKind::Max => {
                        let mut best = window[0];
                        let mut best_i = 0;
                        for (i, &v) in window.iter().enumerate().skip(1) {
                            if v > best {
                                best = v;
                                best_i = i;
                            }
                        }
                        out[[b, ch, o]] = best;
                        argmax.as_mut().unwrap()[(b * c + ch) * lo + o] = start + best_i;
                    }
                }
            }
        }
    }
    (out, argmax)
}

pub(crate) fn pool_backward(
    in_dim: (usize, usize, usize),
    kind: PoolKind,
    size: usize,
    stride: usize,
    argmax: Option<&[usize]>,
    d_out: &Array3<f64>,
) -> Array3<f64> {
    let (bsz, c, _) = in_dim;
    let lo = d_out.dim().2;
    let mut dx = Array3::<f64>::zeros(in_dim);
    for b in 0..bsz {
        for ch in 0..c {
            for o in 0..lo {
                let g = d_out[[b, ch, o]];
                match kind {
                    PoolKind::Average => {
                        let share = g / size as f64;
                        let start = o * stride;
                        for i in start..start + size {
                            dx[[b, ch, i]] += share;
                        }
                    }
                    PoolKind::Max => {
                        let i = argmax.expect("max pool caches argmax")[(b * c + ch) * lo + o];
                        dx[[b, ch, i]] += g;
                    }
                }
            }
        }
    }
    dx
}

// ---------------------------------------------------------------------------
// Batch normalization (per channel over batch x length)
// ---------------------------------------------------------------------------

pub(crate) struct BnCache {
    pub x_hat: Array3<f64>,
    pub inv_std: Array1<f64>,
    pub batch_mean: Array1<f64>,
    pub batch_var: Array1<f64>,
}

pub(crate) fn bn_forward_train(
    x: &Array3<f64>,
    gamma: &Array1<f64>,
    beta: &Array1<f64>,
) -> (Array3<f64>, BnCache) {
    let (bsz, c, l) = x.dim();
    let n = (bsz * l) as f64;
    let mut mean = Array1::<f64>::zeros(c);
    let mut var = Array1::<f64>::zeros(c);
    for ch in 0..c {
        let mut sum = 0.0;
        for b in 0..bsz {
            for i in 0..l {
                sum += x[[b, ch, i]];
            }
        }
        let m = sum / n;
        let mut sq = 0.0;
        for b in 0..bsz {
            for i in 0..l {
                let d = x[[b, ch, i]] - m;
                sq += d * d;
            }
        }
        mean[ch] = m;
        var[ch] = sq / n; // biased, matches the normalization denominator
    }
    let inv_std = var.mapv(|v| 1.0 / (v + BN_EPS).sqrt());
    let mut x_hat = x.clone();
    let mut out = Array3::<f64>::zeros((bsz, c, l));
    for ch in 0..c {
        let (m, is, g, be) = (mean[ch], inv_std[ch], gamma[ch], beta[ch]);
        for b in 0..bsz {
            for i in 0..l {
                let xh = (x[[b, ch, i]] - m) * is;
                x_hat[[b, ch, i]] = xh;
                out[[b, ch, i]] = g * xh + be;
            }
        }
    }
    (
        out,
        BnCache {
            x_hat,
            inv_std,
            batch_mean: mean,
            batch_var: var,
        },
    )
}

pub(crate) fn bn_forward_infer(
    x: &Array3<f64>,
    gamma: &Array1<f64>,
    beta: &Array1<f64>,
    running_mean: &Array1<f64>,
    running_var: &Array1<f64>,
) -> Array3<f64> {
    let (bsz, c, l) = x.dim();
    let mut out = Array3::<f64>::zeros((bsz, c, l));
    for ch in 0..c {
        let is = 1.0 / (running_var[ch] + BN_EPS).sqrt();
        let (m, g, be) = (running_mean[ch], gamma[ch], beta[ch]);
        for b in 0..bsz {
            for i in 0..l {
                out[[b, ch, i]] = g * (x[[b, ch, i]] - m) * is + be;
            }
        }
    }
    out
}

/// Gradients under batch statistics. Returns `(d_gamma, d_beta, d_input)`.
pub(crate) fn bn_backward(
    cache: &BnCache,
    gamma: &Array1<f64>,
    d_out: &Array3<f64>,
) -> (Array1<f64>, Array1<f64>, Array3<f64>) {
    let (bsz, c, l) = d_out.dim();
    let n = (bsz * l) as f64;
    let mut dgamma = Array1::<f64>::zeros(c);
    let mut dbeta = Array1::<f64>::zeros(c);
    let mut dx = Array3::<f64>::zeros((bsz, c, l));
    for ch in 0..c {
        let mut sum_dy = 0.0;
        let mut sum_dy_xhat = 0.0;
        for b in 0..bsz {
            for i in 0..l {
                let dy = d_out[[b, ch, i]];
                sum_dy += dy;
                sum_dy_xhat += dy * cache.x_hat[[b, ch, i]];
            }
        }
        dgamma[ch] = sum_dy_xhat;
        dbeta[ch] = sum_dy;
        let scale = gamma[ch] * cache.inv_std[ch];
        let mean_dy = sum_dy / n;
        let mean_dy_xhat = sum_dy_xhat / n;
        for b in 0..bsz {
            for i in 0..l {
                let dy = d_out[[b, ch, i]];
                dx[[b, ch, i]] =
                    scale * (dy - mean_dy - cache.x_hat[[b, ch, i]] * mean_dy_xhat);
            }
        }
    }
    (dgamma, dbeta, dx)
}

// ---------------------------------------------------------------------------
// Activations
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum ActivationKind {
    Selu,
    Relu,
}

#[inline]
pub(crate) fn activate(kind: ActivationKind, x: f64) -> f64 {
    match kind {
        ActivationKind::Selu => {
            if x > 0.0 {
                SELU_LAMBDA * x
            } else {
                SELU_LAMBDA * SELU_ALPHA * (x.exp() - 1.0)
            }
        }
        ActivationKind::Relu => x.max(0.0),
    }
}

/// Derivative with respect to the pre-activation input.
#[inline]
pub(crate) fn activate_grad(kind: ActivationKind, x: f64) -> f64 {
    match kind {
        ActivationKind::Selu => {
            if x > 0.0 {
                SELU_LAMBDA
            } else {
                SELU_LAMBDA * SELU_ALPHA * x.exp()
            }
        }
        ActivationKind::Relu => {
            if x > 0.0 {
                1.0
            } else {
                0.0
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Dense and softmax output
// ---------------------------------------------------------------------------

/// `x [B, N_in] . w [N_in, N_out] + b`.
pub(crate) fn dense_forward(x: &Array2<f64>, w: &Array2<f64>, b: &Array1<f64>) -> Array2<f64> {
    let mut out = x.dot(w);
    out += b;
    out
}

/// Returns `(dw, db, dx)` for a dense layer.
pub(crate) fn dense_backward(
    x: &Array2<f64>,
    w: &Array2<f64>,
    d_out: &Array2<f64>,
) -> (Array2<f64>, Array1<f64>, Array2<f64>) {
    let dw = x.t().dot(d_out);
    let db = d_out.sum_axis(Axis(0));
    let dx = d_out.dot(&w.t());
    (dw, db, dx)
}

/// Numerically stable row-wise softmax.
pub(crate) fn softmax(z: &Array2<f64>) -> Array2<f64> {
    let mut out = z.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

/// Jacobian-vector product of the softmax: given dL/dp, returns dL/dz.
pub(crate) fn softmax_backward(probs: &Array2<f64>, d_probs: &Array2<f64>) -> Array2<f64> {
    let mut dz = Array2::<f64>::zeros(probs.raw_dim());
    for ((mut dz_row, p_row), g_row) in dz
        .rows_mut()
        .into_iter()
        .zip(probs.rows())
        .zip(d_probs.rows())
    {
        let dot: f64 = p_row.iter().zip(g_row.iter()).map(|(p, g)| p * g).sum();
        for ((dz_v, &p), &g) in dz_row.iter_mut().zip(p_row.iter()).zip(g_row.iter()) {
            *dz_v = p * (g - dot);
        }
    }
    dz
}
