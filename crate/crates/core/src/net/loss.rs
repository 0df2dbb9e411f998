use serde::{Deserialize, Serialize};

use super::batch::Batch;
use super::tensor::{softmax, Mat};
use crate::schedule::{N_CODES, N_TYPES, SLOTS};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub total: f64,
    pub ce: f64,
    pub r_ind: f64,
    pub r_hh: f64,
    /// Number of scored `(b, t, p)` entries.
    pub n_predicted: usize,
}

/// Cross-entropy plus the weighted over-representation penalties on constrained logits.
/// Returns the loss and its gradient with respect to the logits (zero on forced rows).
pub fn loss_and_grad(logits: &Mat, batch: &Batch, weights: &[f64], lambda: f64) -> (LossParts, Mat) {
    assert_eq!(weights.len(), N_TYPES);
    let np = batch.persons;
    let mut grad = Mat::zeros(logits.rows, logits.cols);
    let mut probs = vec![0.0; np * N_CODES];
    let mut dprob = vec![0.0; np * N_CODES];
    let mut n_pred = 0usize;
    let mut n_hh = 0usize;
    for b in 0..batch.size {
        if (1..np).any(|p| batch.predicted(b, p)) {
            n_hh += SLOTS;
            n_pred += (1..np).filter(|&p| batch.predicted(b, p)).count() * SLOTS;
        }
    }
    let mut parts = LossParts {
        n_predicted: n_pred,
        ..LossParts::default()
    };
    if n_pred == 0 {
        return (parts, grad);
    }
    let (inv_n, inv_hh) = (1.0 / n_pred as f64, 1.0 / n_hh as f64);
    for b in 0..batch.size {
        if !(1..np).any(|p| batch.predicted(b, p)) {
            continue;
        }
        for t in 0..SLOTS {
            let mut over = [0.0; N_TYPES];
            for p in 0..np {
                if !batch.is_valid(b, p) {
                    continue;
                }
                let y = batch.code(b, p, t).index();
                if p == 0 {
                    continue;
                }
                let s = &mut probs[p * N_CODES..(p + 1) * N_CODES];
                softmax(logits.row(batch.out_row(b, t, p)), s);
                parts.ce -= s[y].max(f64::MIN_POSITIVE).ln() * inv_n;
                let d = &mut dprob[p * N_CODES..(p + 1) * N_CODES];
                d.iter_mut().for_each(|v| *v = 0.0);
                d[y] -= inv_n / s[y].max(f64::MIN_POSITIVE);
                for a in 0..N_TYPES {
                    let excess = s[a] - if a == y { 1.0 } else { 0.0 };
                    over[a] += excess;
                    if excess > 0.0 {
                        parts.r_ind += excess * weights[a] * inv_n;
                        d[a] += lambda * weights[a] * inv_n;
                    }
                }
            }
            for a in 0..N_TYPES {
                if over[a] > 0.0 {
                    parts.r_hh += over[a] * weights[a] * inv_hh;
                }
            }
            for p in 1..np {
                if !batch.is_valid(b, p) {
                    continue;
                }
                let s = &probs[p * N_CODES..(p + 1) * N_CODES];
                let d = &mut dprob[p * N_CODES..(p + 1) * N_CODES];
                for a in 0..N_TYPES {
                    if over[a] > 0.0 {
                        d[a] += lambda * weights[a] * inv_hh;
                    }
                }
                let sd: f64 = s.iter().zip(d.iter()).map(|(x, y)| x * y).sum();
                let g = grad.row_mut(batch.out_row(b, t, p));
                for j in 0..N_CODES {
                    g[j] = s[j] * (d[j] - sd);
                }
            }
        }
    }
    parts.total = parts.ce + lambda * (parts.r_ind + parts.r_hh);
    (parts, grad)
}
