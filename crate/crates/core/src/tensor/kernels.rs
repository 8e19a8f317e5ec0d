//! Raw slice kernels shared by value-level ops and the tape.
//!
//! Forward kernels report their dense multiply-accumulate count to
//! [`mac_counter`](super::mac_counter); backward helpers do not.

use super::mac_counter;
use crate::error::{shape_err, Error, Result};

pub(crate) fn matmul_dims(a: &[usize], b: &[usize]) -> Result<(usize, usize, usize)> {
    match (a, b) {
        ([m, k], [k2, n]) if k == k2 => Ok((*m, *k, *n)),
        _ => shape_err(format!("matmul {a:?} x {b:?}: inner dimensions disagree")),
    }
}

pub(crate) fn bmm_dims(a: &[usize], b: &[usize]) -> Result<(usize, usize, usize, usize)> {
    match (a, b) {
        ([bs, m, k], [bs2, k2, n]) if bs == bs2 && k == k2 => Ok((*bs, *m, *k, *n)),
        _ => shape_err(format!("batched matmul {a:?} x {b:?}: dimensions disagree")),
    }
}

/// `c[m×n] = a[m×k] · b[k×n]`, row-oriented so zero entries of `a` (spikes)
/// skip their whole row update.
pub(crate) fn gemm(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    mac_counter::add((m * k * n) as u64);
    gemm_uncounted(a, b, m, k, n)
}

fn gemm_uncounted(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for (crow, arow) in c.chunks_exact_mut(n).zip(a.chunks_exact(k)) {
        for (&aip, brow) in arow.iter().zip(b.chunks_exact(n)) {
            if aip == 0.0 {
                continue;
            }
            for (cj, &bj) in crow.iter_mut().zip(brow) {
                *cj += aip * bj;
            }
        }
    }
    c
}

/// `c[m×k] = g[m×n] · b[k×n]ᵀ`
pub(crate) fn gemm_nt(g: &[f64], b: &[f64], m: usize, n: usize, k: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * k];
    for (crow, grow) in c.chunks_exact_mut(k).zip(g.chunks_exact(n)) {
        for (cp, brow) in crow.iter_mut().zip(b.chunks_exact(n)) {
            *cp = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
        }
    }
    c
}

/// `c[k×n] = a[m×k]ᵀ · g[m×n]`
pub(crate) fn gemm_tn(a: &[f64], g: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; k * n];
    for (arow, grow) in a.chunks_exact(k).zip(g.chunks_exact(n)).take(m) {
        for (p, &aip) in arow.iter().enumerate() {
            if aip == 0.0 {
                continue;
            }
            for (cj, &gj) in c[p * n..(p + 1) * n].iter_mut().zip(grow) {
                *cj += aip * gj;
            }
        }
    }
    c
}

pub(crate) fn bmm(a: &[f64], b: &[f64], bs: usize, m: usize, k: usize, n: usize) -> Vec<f64> {
    mac_counter::add((bs * m * k * n) as u64);
    let mut out = Vec::with_capacity(bs * m * n);
    for t in 0..bs {
        out.extend(gemm_uncounted(
            &a[t * m * k..(t + 1) * m * k],
            &b[t * k * n..(t + 1) * k * n],
            m,
            k,
            n,
        ));
    }
    out
}

/// Transposes the last two axes of a `[batch×m×n]` buffer.
pub(crate) fn transpose(x: &[f64], batch: usize, m: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for t in 0..batch {
        let src = &x[t * m * n..(t + 1) * m * n];
        let dst = &mut out[t * m * n..(t + 1) * m * n];
        for i in 0..m {
            for j in 0..n {
                dst[j * m + i] = src[i * n + j];
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeometry {
    pub batch: usize,
    pub c_in: usize,
    pub len: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub l_out: usize,
}

impl ConvGeometry {
    pub fn new(
        batch: usize,
        c_in: usize,
        len: usize,
        w_shape: &[usize],
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        let [c_out, wc_in, kernel] = w_shape[..] else {
            return shape_err(format!("conv1d weight must be C_out×C_in×K, got {w_shape:?}"));
        };
        if wc_in != c_in {
            return shape_err(format!("conv1d weight expects {wc_in} input channels, got {c_in}"));
        }
        if stride == 0 {
            return Err(Error::Config("conv1d stride must be positive".into()));
        }
        if kernel > len + 2 * padding {
            return shape_err(format!(
                "conv1d kernel {kernel} larger than padded input {}",
                len + 2 * padding
            ));
        }
        let l_out = (len + 2 * padding - kernel) / stride + 1;
        Ok(Self { batch, c_in, len, c_out, kernel, stride, padding, l_out })
    }

    /// Input position read by output position `l` at tap `k`, if inside the unpadded input.
    #[inline]
    fn source(&self, l: usize, k: usize) -> Option<usize> {
        (l * self.stride + k).checked_sub(self.padding).filter(|&p| p < self.len)
    }
}

pub(crate) fn conv1d_forward(x: &[f64], w: &[f64], g: &ConvGeometry) -> Vec<f64> {
    mac_counter::add((g.batch * g.l_out * g.c_out * g.c_in * g.kernel) as u64);
    let mut y = vec![0.0; g.batch * g.c_out * g.l_out];
    for b in 0..g.batch {
        let xb = &x[b * g.c_in * g.len..(b + 1) * g.c_in * g.len];
        for o in 0..g.c_out {
            let yrow = &mut y[(b * g.c_out + o) * g.l_out..(b * g.c_out + o + 1) * g.l_out];
            for c in 0..g.c_in {
                let xrow = &xb[c * g.len..(c + 1) * g.len];
                for k in 0..g.kernel {
                    let wv = w[(o * g.c_in + c) * g.kernel + k];
                    for (l, yv) in yrow.iter_mut().enumerate() {
                        if let Some(p) = g.source(l, k) {
                            *yv += wv * xrow[p];
                        }
                    }
                }
            }
        }
    }
    y
}

/// Returns `(dx, dw)` for upstream gradient `gy`.
pub(crate) fn conv1d_backward(
    x: &[f64],
    w: &[f64],
    gy: &[f64],
    g: &ConvGeometry,
) -> (Vec<f64>, Vec<f64>) {
    let mut dx = vec![0.0; x.len()];
    let mut dw = vec![0.0; w.len()];
    for b in 0..g.batch {
        for o in 0..g.c_out {
            let grow = &gy[(b * g.c_out + o) * g.l_out..(b * g.c_out + o + 1) * g.l_out];
            for c in 0..g.c_in {
                let base = (b * g.c_in + c) * g.len;
                for k in 0..g.kernel {
                    let widx = (o * g.c_in + c) * g.kernel + k;
                    let wv = w[widx];
                    let mut acc = 0.0;
                    for (l, &gv) in grow.iter().enumerate() {
                        if let Some(p) = g.source(l, k) {
                            dx[base + p] += wv * gv;
                            acc += x[base + p] * gv;
                        }
                    }
                    dw[widx] += acc;
                }
            }
        }
    }
    (dx, dw)
}

/// Splits a shape around `axis` into `(outer, len, inner)` strides.
pub(crate) fn axis_strides(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub(crate) fn softmax(x: &[f64], shape: &[usize], axis: usize) -> Vec<f64> {
    let (outer, len, inner) = axis_strides(shape, axis);
    let mut y = vec![0.0; x.len()];
    for o in 0..outer {
        for j in 0..inner {
            let idx = |i: usize| (o * len + i) * inner + j;
            let max = (0..len).map(|i| x[idx(i)]).fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for i in 0..len {
                let e = (x[idx(i)] - max).exp();
                y[idx(i)] = e;
                total += e;
            }
            for i in 0..len {
                y[idx(i)] /= total;
            }
        }
    }
    y
}

pub(crate) fn softmax_backward(y: &[f64], gy: &[f64], shape: &[usize], axis: usize) -> Vec<f64> {
    let (outer, len, inner) = axis_strides(shape, axis);
    let mut gx = vec![0.0; y.len()];
    for o in 0..outer {
        for j in 0..inner {
            let idx = |i: usize| (o * len + i) * inner + j;
            let dot: f64 = (0..len).map(|i| y[idx(i)] * gy[idx(i)]).sum();
            for i in 0..len {
                gx[idx(i)] = y[idx(i)] * (gy[idx(i)] - dot);
            }
        }
    }
    gx
}

pub(crate) fn layer_norm_dims(x: &[usize], gamma: &[usize], beta: &[usize], eps: f64) -> Result<usize> {
    if eps.is_nan() || eps <= 0.0 {
        return Err(Error::Config(format!("layer_norm eps must be positive, got {eps}")));
    }
    let Some(&d) = x.last() else {
        return shape_err("layer_norm on a scalar");
    };
    if gamma != [d] || beta != [d] {
        return shape_err(format!(
            "layer_norm affine shapes {gamma:?}/{beta:?} do not match last axis {d}"
        ));
    }
    Ok(d)
}

/// Returns `(y, xhat, inv_std)` where `inv_std` has one entry per slice.
pub(crate) fn layer_norm(
    x: &[f64],
    gamma: &[f64],
    beta: &[f64],
    d: usize,
    eps: f64,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let rows = x.len() / d;
    let mut y = vec![0.0; x.len()];
    let mut xhat = vec![0.0; x.len()];
    let mut inv_std = Vec::with_capacity(rows);
    for r in 0..rows {
        let xs = &x[r * d..(r + 1) * d];
        let mean = xs.iter().sum::<f64>() / d as f64;
        let var = xs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let inv = 1.0 / (var + eps).sqrt();
        inv_std.push(inv);
        for i in 0..d {
            let h = (xs[i] - mean) * inv;
            xhat[r * d + i] = h;
            y[r * d + i] = gamma[i] * h + beta[i];
        }
    }
    (y, xhat, inv_std)
}

/// Returns `(dx, dgamma, dbeta)`.
pub(crate) fn layer_norm_backward(
    xhat: &[f64],
    inv_std: &[f64],
    gamma: &[f64],
    gy: &[f64],
    d: usize,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut dx = vec![0.0; xhat.len()];
    let mut dgamma = vec![0.0; d];
    let mut dbeta = vec![0.0; d];
    let df = d as f64;
    for (r, &inv) in inv_std.iter().enumerate() {
        let hs = &xhat[r * d..(r + 1) * d];
        let gs = &gy[r * d..(r + 1) * d];
        let mut sum_dh = 0.0;
        let mut sum_dh_h = 0.0;
        for i in 0..d {
            let dh = gs[i] * gamma[i];
            sum_dh += dh;
            sum_dh_h += dh * hs[i];
            dgamma[i] += gs[i] * hs[i];
            dbeta[i] += gs[i];
        }
        for i in 0..d {
            let dh = gs[i] * gamma[i];
            dx[r * d + i] = inv / df * (df * dh - sum_dh - hs[i] * sum_dh_h);
        }
    }
    (dx, dgamma, dbeta)
}
