//! Row-major f64 matrices and the numeric kernels shared by the training tape and the
//! incremental inference path.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "shape {rows}x{cols} does not match data");
        Self { rows, cols, data }
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn add_assign(&mut self, other: &Mat) {
        debug_assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn transpose(&self) -> Mat {
        let mut out = Mat::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }
}

#[inline]
fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b) {
        s += x * y;
    }
    s
}

/// `x · w` for `x: [n×k]`, `w: [k×m]`.
pub fn matmul(x: &Mat, w: &Mat) -> Mat {
    assert_eq!(x.cols, w.rows, "matmul inner dims");
    let (n, k, m) = (x.rows, x.cols, w.cols);
    let mut out = Mat::zeros(n, m);
    for i in 0..n {
        let xr = &x.data[i * k..(i + 1) * k];
        let or = &mut out.data[i * m..(i + 1) * m];
        for (kk, &a) in xr.iter().enumerate() {
            if a != 0.0 {
                axpy(or, a, &w.data[kk * m..(kk + 1) * m]);
            }
        }
    }
    out
}

/// `dw += xᵀ · dy`.
pub fn matmul_tn_acc(x: &Mat, dy: &Mat, dw: &mut Mat) {
    assert_eq!(x.rows, dy.rows);
    let (k, m) = (x.cols, dy.cols);
    for i in 0..x.rows {
        let xr = &x.data[i * k..(i + 1) * k];
        let dyr = &dy.data[i * m..(i + 1) * m];
        for (kk, &a) in xr.iter().enumerate() {
            if a != 0.0 {
                axpy(&mut dw.data[kk * m..(kk + 1) * m], a, dyr);
            }
        }
    }
}

pub fn add_row_vec(x: &mut Mat, b: &[f64]) {
    for r in 0..x.rows {
        for (v, bb) in x.row_mut(r).iter_mut().zip(b) {
            *v += bb;
        }
    }
}

pub const LN_EPS: f64 = 1e-5;

/// Row-wise layer normalization; returns output, normalized input and 1/σ per row.
pub fn layer_norm(x: &Mat, gamma: &[f64], beta: &[f64]) -> (Mat, Mat, Vec<f64>) {
    let c = x.cols;
    let mut y = Mat::zeros(x.rows, c);
    let mut xhat = Mat::zeros(x.rows, c);
    let mut inv = vec![0.0; x.rows];
    for r in 0..x.rows {
        let xr = x.row(r);
        let mean = xr.iter().sum::<f64>() / c as f64;
        let var = xr.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
        let is = 1.0 / (var + LN_EPS).sqrt();
        inv[r] = is;
        let hr = xhat.row_mut(r);
        for (h, v) in hr.iter_mut().zip(xr) {
            *h = (v - mean) * is;
        }
        let hr = &xhat.data[r * c..(r + 1) * c];
        for (j, o) in y.row_mut(r).iter_mut().enumerate() {
            *o = hr[j] * gamma[j] + beta[j];
        }
    }
    (y, xhat, inv)
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

#[inline]
pub fn gelu(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    0.5 * x * (1.0 + u.tanh())
}

#[inline]
pub fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

/// Grouped multi-head scaled dot-product attention.
///
/// Queries are `[groups·q_len × E]`, keys and values `[kv_groups·k_len × E]`; query group
/// `g` attends to key group `g / kv_share`. Logits are `scale·q·k`, plus `diag_bias` where
/// query and key positions coincide; masked keys and (if causal) future keys get zero
/// weight.
#[derive(Clone, Debug)]
pub struct AttnSpec {
    pub heads: usize,
    pub q_len: usize,
    pub k_len: usize,
    pub kv_share: usize,
    pub scale: f64,
    pub diag_bias: f64,
    pub causal: bool,
    pub key_mask: Option<Arc<[bool]>>,
}

impl AttnSpec {
    pub fn self_attention(len: usize, heads: usize, head_dim: usize) -> Self {
        Self {
            heads,
            q_len: len,
            k_len: len,
            kv_share: 1,
            scale: 1.0 / (head_dim as f64).sqrt(),
            diag_bias: 0.0,
            causal: false,
            key_mask: None,
        }
    }

    #[inline]
    fn allowed(&self, kv_group: usize, i: usize, j: usize) -> bool {
        if self.causal && j > i {
            return false;
        }
        match &self.key_mask {
            Some(m) => m[kv_group * self.k_len + j],
            None => true,
        }
    }
}

/// Returns the output and the attention probabilities `[groups × heads × q_len × k_len]`.
pub fn attention_forward(q: &Mat, k: &Mat, v: &Mat, spec: &AttnSpec) -> (Mat, Vec<f64>) {
    let e = q.cols;
    let d = e / spec.heads;
    let groups = q.rows / spec.q_len;
    let (ql, kl) = (spec.q_len, spec.k_len);
    let mut out = Mat::zeros(q.rows, e);
    let mut probs = vec![0.0; groups * spec.heads * ql * kl];
    let mut scores = vec![0.0; kl];
    for g in 0..groups {
        let kg = g / spec.kv_share;
        for h in 0..spec.heads {
            let cols = h * d..(h + 1) * d;
            for i in 0..ql {
                let qi = &q.row(g * ql + i)[cols.clone()];
                let mut max = f64::NEG_INFINITY;
                for j in 0..kl {
                    if spec.allowed(kg, i, j) {
                        let mut s = spec.scale * dot(qi, &k.row(kg * kl + j)[cols.clone()]);
                        if i == j {
                            s += spec.diag_bias;
                        }
                        scores[j] = s;
                        max = max.max(s);
                    } else {
                        scores[j] = f64::NEG_INFINITY;
                    }
                }
                if max == f64::NEG_INFINITY {
                    continue;
                }
                let base = ((g * spec.heads + h) * ql + i) * kl;
                let p = &mut probs[base..base + kl];
                let mut z = 0.0;
                for j in 0..kl {
                    let w = if scores[j] == f64::NEG_INFINITY {
                        0.0
                    } else {
                        (scores[j] - max).exp()
                    };
                    p[j] = w;
                    z += w;
                }
                let o = &mut out.data[(g * ql + i) * e + h * d..(g * ql + i) * e + (h + 1) * d];
                for j in 0..kl {
                    p[j] /= z;
                    if p[j] != 0.0 {
                        axpy(o, p[j], &v.row(kg * kl + j)[cols.clone()]);
                    }
                }
            }
        }
    }
    (out, probs)
}

/// Accumulates gradients of the attention inputs given `dout`.
#[allow(clippy::too_many_arguments)]
pub fn attention_backward(
    q: &Mat,
    k: &Mat,
    v: &Mat,
    spec: &AttnSpec,
    probs: &[f64],
    dout: &Mat,
    dq: &mut Mat,
    dk: &mut Mat,
    dv: &mut Mat,
) {
    let e = q.cols;
    let d = e / spec.heads;
    let groups = q.rows / spec.q_len;
    let (ql, kl) = (spec.q_len, spec.k_len);
    let mut dp = vec![0.0; kl];
    for g in 0..groups {
        let kg = g / spec.kv_share;
        for h in 0..spec.heads {
            let lo = h * d;
            for i in 0..ql {
                let qrow = g * ql + i;
                let base = ((g * spec.heads + h) * ql + i) * kl;
                let p = &probs[base..base + kl];
                let doi = &dout.data[qrow * e + lo..qrow * e + lo + d];
                let mut s = 0.0;
                for j in 0..kl {
                    if p[j] != 0.0 {
                        let krow = kg * kl + j;
                        dp[j] = dot(doi, &v.data[krow * e + lo..krow * e + lo + d]);
                        s += p[j] * dp[j];
                        axpy(&mut dv.data[krow * e + lo..krow * e + lo + d], p[j], doi);
                    }
                }
                for j in 0..kl {
                    if p[j] != 0.0 {
                        let krow = kg * kl + j;
                        let ds = p[j] * (dp[j] - s) * spec.scale;
                        axpy(&mut dq.data[qrow * e + lo..qrow * e + lo + d], ds, &k.data[krow * e + lo..krow * e + lo + d]);
                        axpy(&mut dk.data[krow * e + lo..krow * e + lo + d], ds, &q.data[qrow * e + lo..qrow * e + lo + d]);
                    }
                }
            }
        }
    }
}

/// Numerically stable softmax over the finite entries of `z`; `-inf` entries get 0.
pub fn softmax(z: &[f64], out: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for (o, &v) in out.iter_mut().zip(z) {
        *o = if v == f64::NEG_INFINITY { 0.0 } else { (v - max).exp() };
        s += *o;
    }
    for o in out.iter_mut() {
        *o /= s;
    }
}
