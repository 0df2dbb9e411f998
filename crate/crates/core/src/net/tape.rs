//! A small reverse-mode tape over 2-D matrices.

use super::tensor::{self, AttnSpec, Mat};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Gather { src: Var, idx: Vec<usize> },
    Gelu(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Mat, inv_std: Vec<f64> },
    Attention { q: Var, k: Var, v: Var, spec: AttnSpec, probs: Vec<f64> },
    Concat(Var, Var),
    RowScale { x: Var, scale: Vec<f64> },
    Dropout { x: Var, mask: Vec<f64> },
}

struct Node {
    value: Mat,
    op: Op,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Mat, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn matmul(&mut self, x: Var, w: Var) -> Var {
        let out = tensor::matmul(self.value(x), self.value(w));
        self.push(out, Op::MatMul(x, w))
    }

    pub fn add_bias(&mut self, x: Var, b: Var) -> Var {
        let mut out = self.value(x).clone();
        tensor::add_row_vec(&mut out, &self.value(b).data);
        self.push(out, Op::AddBias(x, b))
    }

    /// `x·w + b`
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let y = self.matmul(x, w);
        self.add_bias(y, b)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        self.push(out, Op::Add(a, b))
    }

    /// Row gather: `out[i] = src[idx[i]]`.
    pub fn gather(&mut self, src: Var, idx: Vec<usize>) -> Var {
        let s = self.value(src);
        let mut out = Mat::zeros(idx.len(), s.cols);
        for (i, &r) in idx.iter().enumerate() {
            out.row_mut(i).copy_from_slice(s.row(r));
        }
        self.push(out, Op::Gather { src, idx })
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        out.data.iter_mut().for_each(|v| *v = tensor::gelu(*v));
        self.push(out, Op::Gelu(x))
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let (out, xhat, inv_std) = tensor::layer_norm(self.value(x), &self.value(gamma).data, &self.value(beta).data);
        self.push(out, Op::LayerNorm { x, gamma, beta, xhat, inv_std })
    }

    pub fn attention(&mut self, q: Var, k: Var, v: Var, spec: AttnSpec) -> Var {
        let (out, probs) = tensor::attention_forward(self.value(q), self.value(k), self.value(v), &spec);
        self.push(out, Op::Attention { q, k, v, spec, probs })
    }

    /// Attention probabilities recorded by an attention node.
    pub fn attention_probs(&self, v: Var) -> Option<&[f64]> {
        match &self.nodes[v.0].op {
            Op::Attention { probs, .. } => Some(probs),
            _ => None,
        }
    }

    pub fn concat(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.rows, vb.rows);
        let mut out = Mat::zeros(va.rows, va.cols + vb.cols);
        for r in 0..va.rows {
            let o = out.row_mut(r);
            o[..va.cols].copy_from_slice(va.row(r));
            o[va.cols..].copy_from_slice(vb.row(r));
        }
        self.push(out, Op::Concat(a, b))
    }

    pub fn row_scale(&mut self, x: Var, scale: Vec<f64>) -> Var {
        let mut out = self.value(x).clone();
        for (r, s) in scale.iter().enumerate() {
            out.row_mut(r).iter_mut().for_each(|v| *v *= s);
        }
        self.push(out, Op::RowScale { x, scale })
    }

    /// Elementwise multiply by a fixed mask (already scaled by 1/keep).
    pub fn dropout(&mut self, x: Var, mask: Vec<f64>) -> Var {
        let mut out = self.value(x).clone();
        for (v, m) in out.data.iter_mut().zip(&mask) {
            *v *= m;
        }
        self.push(out, Op::Dropout { x, mask })
    }

    /// Back-propagates `seed` from `root`; returns the gradient of every node reached.
    pub fn backward(&self, root: Var, seed: Mat) -> Vec<Option<Mat>> {
        let mut grads: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(seed);
        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(x, w) => {
                    let wv = self.value(*w);
                    let dx = tensor::matmul(&g, &wv.transpose());
                    accumulate(&mut grads, *x, dx);
                    let xv = self.value(*x);
                    let dw = slot(&mut grads, *w, wv.rows, wv.cols);
                    tensor::matmul_tn_acc(xv, &g, dw);
                }
                Op::AddBias(x, b) => {
                    let bv = self.value(*b);
                    let db = slot(&mut grads, *b, 1, bv.cols);
                    for r in 0..g.rows {
                        for (d, v) in db.data.iter_mut().zip(g.row(r)) {
                            *d += v;
                        }
                    }
                    accumulate(&mut grads, *x, g);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *b, g.clone());
                    accumulate(&mut grads, *a, g);
                }
                Op::Gather { src, idx } => {
                    let s = self.value(*src);
                    let ds = slot(&mut grads, *src, s.rows, s.cols);
                    for (i, &r) in idx.iter().enumerate() {
                        for (d, v) in ds.row_mut(r).iter_mut().zip(g.row(i)) {
                            *d += v;
                        }
                    }
                }
                Op::Gelu(x) => {
                    let xv = self.value(*x);
                    let mut dx = g;
                    for (d, v) in dx.data.iter_mut().zip(&xv.data) {
                        *d *= tensor::gelu_grad(*v);
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::LayerNorm { x, gamma, beta, xhat, inv_std } => {
                    let c = g.cols;
                    let gam = self.value(*gamma).data.clone();
                    {
                        let dg = slot(&mut grads, *gamma, 1, c);
                        for r in 0..g.rows {
                            for ((d, gv), h) in dg.data.iter_mut().zip(g.row(r)).zip(xhat.row(r)) {
                                *d += gv * h;
                            }
                        }
                    }
                    {
                        let db = slot(&mut grads, *beta, 1, c);
                        for r in 0..g.rows {
                            for (d, gv) in db.data.iter_mut().zip(g.row(r)) {
                                *d += gv;
                            }
                        }
                    }
                    let mut dx = Mat::zeros(g.rows, c);
                    for r in 0..g.rows {
                        let gr = g.row(r);
                        let hr = xhat.row(r);
                        let mut m1 = 0.0;
                        let mut m2 = 0.0;
                        for j in 0..c {
                            let dh = gr[j] * gam[j];
                            m1 += dh;
                            m2 += dh * hr[j];
                        }
                        m1 /= c as f64;
                        m2 /= c as f64;
                        let o = dx.row_mut(r);
                        for j in 0..c {
                            o[j] = inv_std[r] * (gr[j] * gam[j] - m1 - hr[j] * m2);
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::Attention { q, k, v, spec, probs } => {
                    let (qv, kv, vv) = (self.value(*q), self.value(*k), self.value(*v));
                    let mut dq = Mat::zeros(qv.rows, qv.cols);
                    let mut dk = Mat::zeros(kv.rows, kv.cols);
                    let mut dv = Mat::zeros(vv.rows, vv.cols);
                    tensor::attention_backward(qv, kv, vv, spec, probs, &g, &mut dq, &mut dk, &mut dv);
                    accumulate(&mut grads, *q, dq);
                    accumulate(&mut grads, *k, dk);
                    accumulate(&mut grads, *v, dv);
                }
                Op::Concat(a, b) => {
                    let ca = self.value(*a).cols;
                    let cb = self.value(*b).cols;
                    let mut da = Mat::zeros(g.rows, ca);
                    let mut db = Mat::zeros(g.rows, cb);
                    for r in 0..g.rows {
                        da.row_mut(r).copy_from_slice(&g.row(r)[..ca]);
                        db.row_mut(r).copy_from_slice(&g.row(r)[ca..]);
                    }
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::RowScale { x, scale } => {
                    let mut dx = g;
                    for (r, s) in scale.iter().enumerate() {
                        dx.row_mut(r).iter_mut().for_each(|v| *v *= s);
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::Dropout { x, mask } => {
                    let mut dx = g;
                    for (v, m) in dx.data.iter_mut().zip(mask) {
                        *v *= m;
                    }
                    accumulate(&mut grads, *x, dx);
                }
            }
        }
        grads
    }
}

fn slot(grads: &mut [Option<Mat>], v: Var, rows: usize, cols: usize) -> &mut Mat {
    grads[v.0].get_or_insert_with(|| Mat::zeros(rows, cols))
}

fn accumulate(grads: &mut [Option<Mat>], v: Var, g: Mat) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        none => *none = Some(g),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    /// Sum of `out ⊙ probe`, differentiated numerically and via the tape.
    fn check(build: impl Fn(&mut Graph, &[Var]) -> Var, inputs: Vec<Mat>) {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|m| g.leaf(m.clone())).collect();
        let out = build(&mut g, &vars);
        let o = g.value(out).clone();
        let probe: Vec<f64> = (0..o.data.len()).map(|i| ((i * 7 + 3) % 11) as f64 / 11.0 - 0.4).collect();
        let grads = g.backward(out, Mat::from_vec(o.rows, o.cols, probe.clone()));
        let f = |ins: &[Mat]| {
            let mut g = Graph::new();
            let vars: Vec<Var> = ins.iter().map(|m| g.leaf(m.clone())).collect();
            let out = build(&mut g, &vars);
            g.value(out).data.iter().zip(&probe).map(|(a, b)| a * b).sum::<f64>()
        };
        for (vi, input) in inputs.iter().enumerate() {
            let analytic = grads[vars[vi].0].clone().unwrap_or(Mat::zeros(0, 0));
            for e in 0..input.data.len() {
                let mut plus = inputs.clone();
                plus[vi].data[e] += 1e-5;
                let mut minus = inputs.clone();
                minus[vi].data[e] -= 1e-5;
                let fd = (f(&plus) - f(&minus)) / 2e-5;
                let a = if analytic.data.is_empty() { 0.0 } else { analytic.data[e] };
                assert!((fd - a).abs() < 1e-7 * (1.0 + fd.abs()), "input {vi} elem {e}: fd {fd} vs {a}");
            }
        }
    }

    fn m(rows: usize, cols: usize, seed: u64) -> Mat {
        let mut s = seed;
        let data = (0..rows * cols)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
            })
            .collect();
        Mat::from_vec(rows, cols, data)
    }

    #[test]
    fn linear_gelu_layernorm_gradients() {
        check(
            |g, v| {
                let y = g.linear(v[0], v[1], v[2]);
                let y = g.gelu(y);
                g.layer_norm(y, v[3], v[4])
            },
            vec![m(4, 3, 1), m(3, 5, 2), m(1, 5, 3), m(1, 5, 4), m(1, 5, 5)],
        );
    }

    #[test]
    fn gather_concat_scale_gradients() {
        check(
            |g, v| {
                let a = g.gather(v[0], vec![2, 0, 2, 1]);
                let c = g.concat(a, v[1]);
                let c = g.row_scale(c, vec![1.0, 0.0, 2.0, -1.0]);
                g.dropout(c, vec![2.0, 0.0, 1.0, 1.0, 1.0, 2.0, 0.0, 1.0, 1.0, 1.0, 1.0, 2.0, 1.0, 1.0, 0.0, 1.0, 1.0, 1.0, 2.0, 1.0])
            },
            vec![m(3, 2, 7), m(4, 3, 8)],
        );
    }

    #[test]
    fn grouped_masked_attention_gradients() {
        // 2 query groups sharing one kv group, causal with a masked key and diagonal bias
        let spec = AttnSpec {
            heads: 2,
            q_len: 3,
            k_len: 3,
            kv_share: 2,
            scale: 0.7,
            diag_bias: 0.9,
            causal: true,
            key_mask: Some(Arc::from(vec![true, false, true])),
        };
        check(
            move |g, v| {
                let a = g.attention(v[0], v[1], v[2], spec.clone());
                g.add(a, v[0])
            },
            vec![m(6, 4, 11), m(3, 4, 12), m(3, 4, 13)],
        );
    }
}
