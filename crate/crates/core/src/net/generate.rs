//! Slot-by-slot inference with cached keys and values.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::batch::{person_features, FEATURE_DIM};
use super::params::{ModelConfig, ParamStore, BOS};
use super::tensor::{self, add_row_vec, attention_forward, matmul, AttnSpec, Mat};
use crate::error::{Error, Result};
use crate::schedule::{ActivityType, Household, SlotGrid, N_TYPES, SLOTS};

struct Ops<'a> {
    p: &'a ParamStore,
}

impl Ops<'_> {
    fn lin(&self, x: &Mat, w: &str, b: &str) -> Mat {
        let mut y = matmul(x, self.p.get(w));
        add_row_vec(&mut y, &self.p.get(b).data);
        y
    }

    fn mm(&self, x: &Mat, w: &str) -> Mat {
        matmul(x, self.p.get(w))
    }

    fn ln(&self, x: &Mat, prefix: &str) -> Mat {
        let g = self.p.get(&format!("{prefix}.ln.g"));
        let b = self.p.get(&format!("{prefix}.ln.b"));
        tensor::layer_norm(x, &g.data, &b.data).0
    }

    fn gelu(mut x: Mat) -> Mat {
        x.data.iter_mut().for_each(|v| *v = tensor::gelu(*v));
        x
    }

    fn ffn(&self, x: &mut Mat, prefix: &str) {
        let h = self.ln(x, prefix);
        let f = Self::gelu(self.lin(&h, &format!("{prefix}.w1"), &format!("{prefix}.b1")));
        let f = self.lin(&f, &format!("{prefix}.w2"), &format!("{prefix}.b2"));
        x.add_assign(&f);
    }
}

/// Per-household decoder state; `step` produces raw logits for one slot.
pub struct Decoder<'a> {
    ops: Ops<'a>,
    cfg: &'a ModelConfig,
    persons: usize,
    attr0: Mat,
    ctxp: Mat,
    mem_k: Vec<Mat>,
    mem_v: Vec<Mat>,
    cache_k: Vec<Mat>,
    cache_v: Vec<Mat>,
    next_slot: usize,
}

fn finite(m: &Mat, layer: &str) -> Result<()> {
    if m.is_finite() {
        Ok(())
    } else {
        Err(Error::NumericFault { layer: layer.into() })
    }
}

impl<'a> Decoder<'a> {
    /// `household` must be normalized (head first) and `head` is the head's 96 codes.
    pub fn new(params: &'a ParamStore, cfg: &'a ModelConfig, household: &Household, head: &[ActivityType; SLOTS]) -> Result<Self> {
        let ops = Ops { p: params };
        let np = household.size();
        if np == 0 || np > cfg.p_max {
            return Err(Error::Config(format!("household {} has {np} members", household.household_id)));
        }
        if let Some(slot) = head.iter().position(|c| c.is_pad()) {
            return Err(Error::MaskedPerson { slot });
        }
        let e = cfg.embed_dim;
        let mut feats = Vec::with_capacity(np * FEATURE_DIM);
        for p in &household.members {
            feats.extend_from_slice(&person_features(household, p));
        }
        let attr0 = ops.lin(&Mat::from_vec(np, FEATURE_DIM, feats), "attr.w", "attr.b");
        finite(&attr0, "attribute_embedding")?;

        let roles = params.get("role.queries");
        let mut rq = Mat::zeros(np, e);
        for p in 0..np {
            rq.row_mut(p).copy_from_slice(roles.row(p));
        }
        let val = ops.lin(&attr0, "role.wv", "role.bv");
        let spec = AttnSpec {
            heads: 1,
            q_len: np,
            k_len: np,
            kv_share: 1,
            scale: 1.0 / (cfg.match_temperature * (e as f64).sqrt()),
            diag_bias: cfg.diag_bias,
            causal: false,
            key_mask: None,
        };
        let mut x = attention_forward(&rq, &attr0, &val, &spec).0;
        x.add_assign(&attr0);
        finite(&x, "role_match")?;

        for l in 0..cfg.n_encoder_layers {
            let pre = format!("enc{l}.attn");
            let h = ops.ln(&x, &pre);
            let (q, k, v) = (ops.mm(&h, &format!("{pre}.wq")), ops.mm(&h, &format!("{pre}.wk")), ops.mm(&h, &format!("{pre}.wv")));
            let a = attention_forward(&q, &k, &v, &AttnSpec::self_attention(np, cfg.n_heads, cfg.head_dim())).0;
            x.add_assign(&ops.mm(&a, &format!("{pre}.wo")));
            ops.ffn(&mut x, &format!("enc{l}.ffn"));
            finite(&x, &format!("encoder{l}"))?;
        }
        let ctxp = ops.lin(&x, "ctx.w", "ctx.b");

        let (ce, te) = (params.get("code_emb"), params.get("time_emb"));
        let mut mem = Mat::zeros(SLOTS, e);
        for t in 0..SLOTS {
            let r = mem.row_mut(t);
            r.copy_from_slice(ce.row(head[t].index()));
            r.iter_mut().zip(te.row(t)).for_each(|(a, b)| *a += b);
        }
        let mem = ops.ln(&mem, "mem");
        let mut mem_k = Vec::new();
        let mut mem_v = Vec::new();
        for l in 0..cfg.n_decoder_layers {
            mem_k.push(ops.mm(&mem, &format!("dec{l}.cross.wk")));
            mem_v.push(ops.mm(&mem, &format!("dec{l}.cross.wv")));
        }
        Ok(Self {
            ops,
            cfg,
            persons: np,
            attr0,
            ctxp,
            mem_k,
            mem_v,
            cache_k: vec![Mat::zeros(np * SLOTS, e); cfg.n_decoder_layers],
            cache_v: vec![Mat::zeros(np * SLOTS, e); cfg.n_decoder_layers],
            next_slot: 0,
        })
    }

    pub fn persons(&self) -> usize {
        self.persons
    }

    /// Raw logits `[persons × 16]` for the next slot given every person's code at the
    /// previous slot (ignored at slot 0).
    pub fn step(&mut self, prev: &[ActivityType]) -> Result<Mat> {
        let t = self.next_slot;
        assert!(t < SLOTS, "decoder already produced all slots");
        let (np, e, cfg) = (self.persons, self.cfg.embed_dim, self.cfg);
        let ops = &self.ops;
        let (ce, te) = (ops.p.get("code_emb"), ops.p.get("time_emb"));
        let mut x = Mat::zeros(np, e);
        for p in 0..np {
            let code = if t == 0 { BOS } else { prev[p].index() };
            let r = x.row_mut(p);
            r.copy_from_slice(ce.row(code));
            r.iter_mut().zip(te.row(t)).for_each(|(a, b)| *a += b);
            r.iter_mut().zip(self.ctxp.row(p)).for_each(|(a, b)| *a += b);
        }
        let time_mask: Arc<[bool]> = (0..np * SLOTS).map(|i| i % SLOTS <= t).collect::<Vec<_>>().into();
        let one_query = |kv_share: usize, key_mask: Option<Arc<[bool]>>| AttnSpec {
            q_len: 1,
            kv_share,
            key_mask,
            ..AttnSpec::self_attention(SLOTS, cfg.n_heads, cfg.head_dim())
        };
        for l in 0..cfg.n_decoder_layers {
            let pre = format!("dec{l}.time");
            let h = ops.ln(&x, &pre);
            let q = ops.mm(&h, &format!("{pre}.wq"));
            let k = ops.mm(&h, &format!("{pre}.wk"));
            let v = ops.mm(&h, &format!("{pre}.wv"));
            for p in 0..np {
                self.cache_k[l].row_mut(p * SLOTS + t).copy_from_slice(k.row(p));
                self.cache_v[l].row_mut(p * SLOTS + t).copy_from_slice(v.row(p));
            }
            let a = attention_forward(&q, &self.cache_k[l], &self.cache_v[l], &one_query(1, Some(time_mask.clone()))).0;
            x.add_assign(&ops.mm(&a, &format!("{pre}.wo")));

            let pre = format!("dec{l}.person");
            let h = ops.ln(&x, &pre);
            let (q, k, v) = (ops.mm(&h, &format!("{pre}.wq")), ops.mm(&h, &format!("{pre}.wk")), ops.mm(&h, &format!("{pre}.wv")));
            let a = attention_forward(&q, &k, &v, &AttnSpec::self_attention(np, cfg.n_heads, cfg.head_dim())).0;
            x.add_assign(&ops.mm(&a, &format!("{pre}.wo")));

            let pre = format!("dec{l}.cross");
            let h = ops.ln(&x, &pre);
            let q = ops.mm(&h, &format!("{pre}.wq"));
            let a = attention_forward(&q, &self.mem_k[l], &self.mem_v[l], &one_query(np, None)).0;
            x.add_assign(&ops.mm(&a, &format!("{pre}.wo")));

            ops.ffn(&mut x, &format!("dec{l}.ffn"));
            finite(&x, &format!("decoder{l}"))?;
        }
        let h = ops.ln(&x, "out");
        let mut c = Mat::zeros(np, 2 * e);
        for p in 0..np {
            let r = c.row_mut(p);
            r[..e].copy_from_slice(h.row(p));
            r[e..].copy_from_slice(self.attr0.row(p));
        }
        let z = Ops::gelu(ops.lin(&c, "out.fc1.w", "out.fc1.b"));
        let z = ops.lin(&z, "out.fc2.w", "out.fc2.b");
        finite(&z, "output")?;
        self.next_slot += 1;
        Ok(z)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplingOptions {
    /// 0 selects the most probable activity.
    pub temperature: f64,
    pub seed: u64,
}

impl Default for SamplingOptions {
    fn default() -> Self {
        Self { temperature: 1.0, seed: 0 }
    }
}

/// Independent stream per household so output does not depend on iteration order.
pub fn household_rng(seed: u64, household_id: u64) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(household_id.to_le_bytes());
    let d = h.finalize();
    ChaCha8Rng::seed_from_u64(u64::from_le_bytes(d[..8].try_into().unwrap()))
}

/// Picks a non-PAD activity from raw logits.
pub fn sample_code(logits: &[f64], temperature: f64, rng: &mut impl Rng) -> ActivityType {
    let z = &logits[..N_TYPES];
    if temperature <= 0.0 {
        let mut best = 0;
        for (j, v) in z.iter().enumerate() {
            if *v > z[best] {
                best = j;
            }
        }
        return ActivityType::from_code(best as u8).unwrap();
    }
    let scaled: Vec<f64> = z.iter().map(|v| v / temperature).collect();
    let mut p = vec![0.0; N_TYPES];
    tensor::softmax(&scaled, &mut p);
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (j, pj) in p.iter().enumerate() {
        acc += pj;
        if u < acc {
            return ActivityType::from_code(j as u8).unwrap();
        }
    }
    let last = p.iter().rposition(|&v| v > 0.0).unwrap_or(0);
    ActivityType::from_code(last as u8).unwrap()
}

/// Generates member schedules conditioned on the head's schedule.
pub fn generate_household(
    params: &ParamStore,
    cfg: &ModelConfig,
    household: &Household,
    head: &[ActivityType; SLOTS],
    opts: &SamplingOptions,
) -> Result<SlotGrid> {
    let mut dec = Decoder::new(params, cfg, household, head)?;
    let np = dec.persons();
    let mut rng = household_rng(opts.seed, household.household_id);
    let mut grid = SlotGrid::padded(np);
    let mut prev = vec![ActivityType::PAD; np];
    for t in 0..SLOTS {
        let z = dec.step(&prev)?;
        for p in 0..np {
            let code = if p == 0 { head[t] } else { sample_code(z.row(p), opts.temperature, &mut rng) };
            grid.rows[p][t] = code;
            prev[p] = code;
        }
    }
    debug_assert!(grid.validate().is_ok());
    Ok(grid)
}

/// Raw logits slot by slot with the given grid as decoder input, `[96][persons × 16]`.
pub fn teacher_forced_logits(params: &ParamStore, cfg: &ModelConfig, household: &Household, grid: &SlotGrid) -> Result<Vec<Mat>> {
    let mut dec = Decoder::new(params, cfg, household, &grid.rows[0])?;
    let np = dec.persons();
    let mut out = Vec::with_capacity(SLOTS);
    let mut prev = vec![ActivityType::PAD; np];
    for t in 0..SLOTS {
        out.push(dec.step(&prev)?);
        for p in 0..np {
            prev[p] = grid.rows[p][t];
        }
    }
    Ok(out)
}
