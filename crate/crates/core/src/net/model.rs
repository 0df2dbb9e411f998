use std::collections::BTreeMap;
use std::sync::Arc;

use rand::Rng;

use super::batch::{Batch, FEATURE_DIM};
use super::params::{ModelConfig, ParamStore, BOS};
use super::tape::{Graph, Var};
use super::tensor::{AttnSpec, Mat};
use crate::error::{Error, Result};
use crate::schedule::{ActivityType, N_CODES, SLOTS};

/// A forward pass recorded on a tape.
pub struct Forward {
    pub graph: Graph,
    /// Raw logits `[B·T·P × 16]`, rows in `(b, t, p)` order.
    pub logits: Var,
    /// Role-match attention node; its probabilities are `[B × P × P]`.
    pub role_attention: Var,
    /// Parameter leaves by name.
    pub bound: BTreeMap<String, Var>,
}

struct Builder<'a, 'r> {
    params: &'a ParamStore,
    cfg: &'a ModelConfig,
    g: Graph,
    bound: BTreeMap<String, Var>,
    rng: Option<&'r mut dyn rand::RngCore>,
}

impl Builder<'_, '_> {
    fn p(&mut self, name: &str) -> Var {
        if let Some(v) = self.bound.get(name) {
            return *v;
        }
        let v = self.g.leaf(self.params.get(name).clone());
        self.bound.insert(name.to_string(), v);
        v
    }

    fn ln(&mut self, x: Var, prefix: &str) -> Var {
        let g = self.p(&format!("{prefix}.ln.g"));
        let b = self.p(&format!("{prefix}.ln.b"));
        self.g.layer_norm(x, g, b)
    }

    fn mm(&mut self, x: Var, name: &str) -> Var {
        let w = self.p(name);
        self.g.matmul(x, w)
    }

    fn drop(&mut self, x: Var) -> Var {
        let rate = self.cfg.dropout;
        let Some(rng) = self.rng.as_mut() else { return x };
        if rate <= 0.0 {
            return x;
        }
        let n = self.g.value(x).data.len();
        let keep = 1.0 / (1.0 - rate);
        let mask = (0..n)
            .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
            .collect();
        self.g.dropout(x, mask)
    }

    fn check(&self, v: Var, layer: &str) -> Result<()> {
        if self.g.value(v).is_finite() {
            Ok(())
        } else {
            Err(Error::NumericFault { layer: layer.to_string() })
        }
    }

    /// Residual pre-LN attention block: `x + Wo·attn(LN(x)·Wq, kv·Wk, kv·Wv)`.
    /// `kv` of `None` means self-attention on `LN(x)`; `perm` reorders rows before
    /// attending and `inv` restores them.
    fn attn_block(&mut self, x: Var, prefix: &str, kv: Option<Var>, spec: AttnSpec, perm: Option<(&[usize], &[usize])>) -> Var {
        let mut h = self.ln(x, prefix);
        if let Some((p, _)) = perm {
            h = self.g.gather(h, p.to_vec());
        }
        let kv_src = kv.unwrap_or(h);
        let q = self.mm(h, &format!("{prefix}.wq"));
        let k = self.mm(kv_src, &format!("{prefix}.wk"));
        let v = self.mm(kv_src, &format!("{prefix}.wv"));
        let a = self.g.attention(q, k, v, spec);
        let mut o = self.mm(a, &format!("{prefix}.wo"));
        if let Some((_, inv)) = perm {
            o = self.g.gather(o, inv.to_vec());
        }
        let o = self.drop(o);
        self.g.add(x, o)
    }

    fn ffn_block(&mut self, x: Var, prefix: &str) -> Var {
        let h = self.ln(x, prefix);
        let w1 = self.p(&format!("{prefix}.w1"));
        let b1 = self.p(&format!("{prefix}.b1"));
        let w2 = self.p(&format!("{prefix}.w2"));
        let b2 = self.p(&format!("{prefix}.b2"));
        let f = self.g.linear(h, w1, b1);
        let f = self.g.gelu(f);
        let f = self.g.linear(f, w2, b2);
        let f = self.drop(f);
        self.g.add(x, f)
    }
}

/// Builds the teacher-forced forward pass. `dropout_rng` enables dropout.
pub fn forward(params: &ParamStore, cfg: &ModelConfig, batch: &Batch, dropout_rng: Option<&mut dyn rand::RngCore>) -> Result<Forward> {
    let (nb, np, t_len, e) = (batch.size, batch.persons, SLOTS, cfg.embed_dim);
    if np > cfg.p_max {
        return Err(Error::Config(format!("batch has {np} persons, model p_max is {}", cfg.p_max)));
    }
    for b in 0..nb {
        if !batch.is_valid(b, 0) {
            return Err(Error::DegenerateMask { index: b });
        }
    }
    let mut bd = Builder {
        params,
        cfg,
        g: Graph::new(),
        bound: BTreeMap::new(),
        rng: dropout_rng,
    };
    let row_mask: Vec<f64> = batch.valid.iter().map(|&v| if v { 1.0 } else { 0.0 }).collect();
    let valid: Arc<[bool]> = batch.valid.clone().into();

    // Attribute embedding.
    let x = bd.g.leaf(Mat::from_vec(nb * np, FEATURE_DIM, batch.features.clone()));
    let (w, b) = (bd.p("attr.w"), bd.p("attr.b"));
    let attr = bd.g.linear(x, w, b);
    let attr0 = bd.g.row_scale(attr, row_mask.clone());
    bd.check(attr0, "attribute_embedding")?;

    // Role matching: person slot p queries every household member.
    let rq = bd.p("role.queries");
    let rq = bd.g.gather(rq, (0..nb * np).map(|r| r % np).collect());
    let (wv, bv) = (bd.p("role.wv"), bd.p("role.bv"));
    let val = bd.g.linear(attr0, wv, bv);
    let spec = AttnSpec {
        heads: 1,
        q_len: np,
        k_len: np,
        kv_share: 1,
        scale: 1.0 / (cfg.match_temperature * (e as f64).sqrt()),
        diag_bias: cfg.diag_bias,
        causal: false,
        key_mask: Some(valid.clone()),
    };
    let role_attention = bd.g.attention(rq, attr0, val, spec);
    let refined = bd.g.add(role_attention, attr0);
    let mut h = bd.g.row_scale(refined, row_mask.clone());
    bd.check(h, "role_match")?;

    // Household encoder over persons.
    let person_spec = |heads: usize| AttnSpec {
        key_mask: Some(valid.clone()),
        ..AttnSpec::self_attention(np, heads, cfg.head_dim())
    };
    for l in 0..cfg.n_encoder_layers {
        h = bd.attn_block(h, &format!("enc{l}.attn"), None, person_spec(cfg.n_heads), None);
        h = bd.ffn_block(h, &format!("enc{l}.ffn"));
        bd.check(h, &format!("encoder{l}"))?;
    }
    let ctx = h;

    // Head schedule memory.
    let mut head_idx = Vec::with_capacity(nb * t_len);
    let mut time_idx_mem = Vec::with_capacity(nb * t_len);
    for b in 0..nb {
        for t in 0..t_len {
            head_idx.push(batch.code(b, 0, t).index());
            time_idx_mem.push(t);
        }
    }
    let ce = bd.p("code_emb");
    let te = bd.p("time_emb");
    let hm = bd.g.gather(ce, head_idx);
    let tm = bd.g.gather(te, time_idx_mem);
    let mem = bd.g.add(hm, tm);
    let mem = bd.ln(mem, "mem");

    // Decoder tokens in (b, p, t) order, shifted right by one slot.
    let rows = nb * np * t_len;
    let mut inp = Vec::with_capacity(rows);
    let mut tix = Vec::with_capacity(rows);
    let mut pix = Vec::with_capacity(rows);
    for b in 0..nb {
        for p in 0..np {
            for t in 0..t_len {
                inp.push(if t == 0 { BOS } else { batch.code(b, p, t - 1).index() });
                tix.push(t);
                pix.push(b * np + p);
            }
        }
    }
    let (cw, cb) = (bd.p("ctx.w"), bd.p("ctx.b"));
    let ctxp = bd.g.linear(ctx, cw, cb);
    let tok_c = bd.g.gather(ce, inp);
    let tok_t = bd.g.gather(te, tix);
    let tok_x = bd.g.gather(ctxp, pix.clone());
    let tok = bd.g.add(tok_c, tok_t);
    let mut x = bd.g.add(tok, tok_x);

    // (b, t, p) order <-> (b, p, t) order.
    let mut to_btp = Vec::with_capacity(rows);
    let mut person_keys = Vec::with_capacity(rows);
    for b in 0..nb {
        for t in 0..t_len {
            for p in 0..np {
                to_btp.push((b * np + p) * t_len + t);
                person_keys.push(batch.is_valid(b, p));
            }
        }
    }
    let mut to_bpt = vec![0; rows];
    for (i, &src) in to_btp.iter().enumerate() {
        to_bpt[src] = i;
    }
    let person_keys: Arc<[bool]> = person_keys.into();

    for l in 0..cfg.n_decoder_layers {
        let time_spec = AttnSpec {
            causal: true,
            ..AttnSpec::self_attention(t_len, cfg.n_heads, cfg.head_dim())
        };
        x = bd.attn_block(x, &format!("dec{l}.time"), None, time_spec, None);
        let pspec = AttnSpec {
            key_mask: Some(person_keys.clone()),
            ..AttnSpec::self_attention(np, cfg.n_heads, cfg.head_dim())
        };
        x = bd.attn_block(x, &format!("dec{l}.person"), None, pspec, Some((&to_btp, &to_bpt)));
        let cspec = AttnSpec {
            kv_share: np,
            ..AttnSpec::self_attention(t_len, cfg.n_heads, cfg.head_dim())
        };
        x = bd.attn_block(x, &format!("dec{l}.cross"), Some(mem), cspec, None);
        x = bd.ffn_block(x, &format!("dec{l}.ffn"));
        bd.check(x, &format!("decoder{l}"))?;
    }

    // Output head fused with the un-refined attribute embedding.
    let hx = bd.ln(x, "out");
    let feat = bd.g.gather(attr0, (0..rows).map(|r| r / t_len).collect());
    let c = bd.g.concat(hx, feat);
    let (w1, b1, w2, b2) = (bd.p("out.fc1.w"), bd.p("out.fc1.b"), bd.p("out.fc2.w"), bd.p("out.fc2.b"));
    let z = bd.g.linear(c, w1, b1);
    let z = bd.g.gelu(z);
    let z = bd.g.linear(z, w2, b2);
    let logits = bd.g.gather(z, to_btp);
    bd.check(logits, "output")?;
    Ok(Forward {
        graph: bd.g,
        logits,
        role_attention,
        bound: bd.bound,
    })
}

/// Applies the structural constraints: masked persons can only be PAD, the head row only
/// its observed code, and predicted persons never PAD.
pub fn constrain_logits(raw: &Mat, batch: &Batch) -> Mat {
    let mut out = raw.clone();
    let pad = ActivityType::PAD.index();
    for b in 0..batch.size {
        for t in 0..SLOTS {
            for p in 0..batch.persons {
                let row = out.row_mut(batch.out_row(b, t, p));
                if !batch.is_valid(b, p) {
                    one_hot(row, pad);
                } else if p == 0 {
                    one_hot(row, batch.code(b, 0, t).index());
                } else {
                    row[pad] = f64::NEG_INFINITY;
                }
            }
        }
    }
    out
}

fn one_hot(row: &mut [f64], k: usize) {
    debug_assert_eq!(row.len(), N_CODES);
    for (j, v) in row.iter_mut().enumerate() {
        *v = if j == k { 0.0 } else { f64::NEG_INFINITY };
    }
}

/// Role-match probabilities `[B × P × P]` of a forward pass.
pub fn role_probabilities(f: &Forward) -> &[f64] {
    f.graph.attention_probs(f.role_attention).expect("attention node")
}
