use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::batch::{Batch, HouseholdSample};
use super::loss::{loss_and_grad, LossParts};
use super::model::{constrain_logits, forward};
use super::params::{ModelConfig, ParamStore};
use super::tensor::Mat;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSettings {
    pub epochs: usize,
    /// Households per batch.
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    pub train_fraction: f64,
    pub val_fraction: f64,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 32,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            train_fraction: 0.8,
            val_fraction: 0.1,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Deterministic shuffled split of `n` sample indices.
pub fn split_indices(n: usize, train_fraction: f64, val_fraction: f64, seed: u64) -> Split {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ SPLIT_SALT));
    let n_train = (n as f64 * train_fraction).round() as usize;
    let n_val = ((n as f64 * val_fraction).round() as usize).min(n - n_train.min(n));
    let n_train = n_train.min(n);
    Split {
        train: idx[..n_train].to_vec(),
        val: idx[n_train..n_train + n_val].to_vec(),
        test: idx[n_train + n_val..].to_vec(),
    }
}

const SPLIT_SALT: u64 = 0x5eed_0001;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train: LossParts,
    pub val: Option<LossParts>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainOutput {
    pub config: ModelConfig,
    pub settings: TrainSettings,
    /// Parameters of the epoch with the lowest validation loss.
    pub params: ParamStore,
    pub best_epoch: usize,
    pub history: Vec<EpochLog>,
    pub activity_weights: Vec<f64>,
    pub split: Split,
}

/// Groups indices into batches of equal household size.
pub fn bucket_batches(samples: &[HouseholdSample], indices: &[usize], batch_size: usize) -> Vec<Vec<usize>> {
    let mut by_size: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &i in indices {
        by_size.entry(samples[i].household.size()).or_default().push(i);
    }
    by_size
        .into_values()
        .flat_map(|v| v.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect::<Vec<_>>())
        .collect()
}

/// Loss and parameter gradients for one batch.
pub fn loss_and_param_grads(
    params: &ParamStore,
    cfg: &ModelConfig,
    batch: &Batch,
    weights: &[f64],
    dropout_rng: Option<&mut dyn rand::RngCore>,
) -> Result<(LossParts, BTreeMap<String, Mat>)> {
    let f = forward(params, cfg, batch, dropout_rng)?;
    let logits = constrain_logits(f.graph.value(f.logits), batch);
    let (parts, dz) = loss_and_grad(&logits, batch, weights, cfg.lambda_aor);
    let grads = f.graph.backward(f.logits, dz);
    let mut out = BTreeMap::new();
    for (name, var) in &f.bound {
        let g = grads[var.index()].clone().unwrap_or_else(|| {
            let v = params.get(name);
            Mat::zeros(v.rows, v.cols)
        });
        out.insert(name.clone(), g);
    }
    Ok((parts, out))
}

/// Mean loss over `indices`, weighted by scored entries.
pub fn evaluate(params: &ParamStore, cfg: &ModelConfig, samples: &[HouseholdSample], indices: &[usize], weights: &[f64], batch_size: usize) -> Result<LossParts> {
    let mut acc = LossParts::default();
    for b in bucket_batches(samples, indices, batch_size) {
        let refs: Vec<&HouseholdSample> = b.iter().map(|&i| &samples[i]).collect();
        let batch = Batch::fit(&refs);
        let f = forward(params, cfg, &batch, None)?;
        let logits = constrain_logits(f.graph.value(f.logits), &batch);
        let (p, _) = loss_and_grad(&logits, &batch, weights, cfg.lambda_aor);
        let w = p.n_predicted as f64;
        acc.total += p.total * w;
        acc.ce += p.ce * w;
        acc.r_ind += p.r_ind * w;
        acc.r_hh += p.r_hh * w;
        acc.n_predicted += p.n_predicted;
    }
    if acc.n_predicted > 0 {
        let n = acc.n_predicted as f64;
        acc.total /= n;
        acc.ce /= n;
        acc.r_ind /= n;
        acc.r_hh /= n;
    }
    Ok(acc)
}

struct Adam {
    m: BTreeMap<String, Vec<f64>>,
    v: BTreeMap<String, Vec<f64>>,
    step: i32,
}

impl Adam {
    fn update(&mut self, params: &mut ParamStore, grads: &BTreeMap<String, Mat>, s: &TrainSettings) {
        self.step += 1;
        let c1 = 1.0 - s.beta1.powi(self.step);
        let c2 = 1.0 - s.beta2.powi(self.step);
        for (name, g) in grads {
            let w = params.tensors.get_mut(name).expect("parameter");
            let m = self.m.entry(name.clone()).or_insert_with(|| vec![0.0; g.data.len()]);
            let v = self.v.entry(name.clone()).or_insert_with(|| vec![0.0; g.data.len()]);
            for i in 0..g.data.len() {
                let gi = g.data[i];
                m[i] = s.beta1 * m[i] + (1.0 - s.beta1) * gi;
                v[i] = s.beta2 * v[i] + (1.0 - s.beta2) * gi * gi;
                w.data[i] -= s.learning_rate * (m[i] / c1) / ((v[i] / c2).sqrt() + s.adam_eps);
            }
        }
    }
}

/// Trains from `init` (or a fresh initialization), keeping the best-validation parameters.
pub fn train(
    samples: &[HouseholdSample],
    cfg: &ModelConfig,
    settings: &TrainSettings,
    activity_weights: &[f64],
    init: Option<ParamStore>,
) -> Result<TrainOutput> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::Config("training corpus is empty".into()));
    }
    let split = split_indices(samples.len(), settings.train_fraction, settings.val_fraction, settings.seed);
    let mut params = init.unwrap_or_else(|| ParamStore::init(cfg, settings.seed));
    params.check_shapes(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed.wrapping_add(1));
    let mut adam = Adam {
        m: BTreeMap::new(),
        v: BTreeMap::new(),
        step: 0,
    };
    let mut out = TrainOutput {
        config: cfg.clone(),
        settings: settings.clone(),
        params: params.clone(),
        best_epoch: 0,
        history: Vec::new(),
        activity_weights: activity_weights.to_vec(),
        split: split.clone(),
    };
    let mut best = f64::INFINITY;
    let train_idx: Vec<usize> = split.train.iter().copied().filter(|&i| samples[i].household.size() > 1).collect();
    for epoch in 1..=settings.epochs {
        let mut order = train_idx.clone();
        order.shuffle(&mut rng);
        let mut batches = bucket_batches(samples, &order, settings.batch_size);
        batches.shuffle(&mut rng);
        let mut acc = LossParts::default();
        for b in &batches {
            let refs: Vec<&HouseholdSample> = b.iter().map(|&i| &samples[i]).collect();
            let batch = Batch::fit(&refs);
            let drop_rng: Option<&mut dyn rand::RngCore> = if cfg.dropout > 0.0 { Some(&mut rng) } else { None };
            let (parts, grads) = match loss_and_param_grads(&params, cfg, &batch, activity_weights, drop_rng) {
                Ok(r) => r,
                Err(Error::NumericFault { .. }) => return Err(diverged(epoch, out)),
                Err(e) => return Err(e),
            };
            if !parts.total.is_finite() || grads.values().any(|g| !g.is_finite()) {
                return Err(diverged(epoch, out));
            }
            adam.update(&mut params, &grads, settings);
            let w = parts.n_predicted as f64;
            acc.total += parts.total * w;
            acc.ce += parts.ce * w;
            acc.r_ind += parts.r_ind * w;
            acc.r_hh += parts.r_hh * w;
            acc.n_predicted += parts.n_predicted;
        }
        if !params.is_finite() {
            return Err(diverged(epoch, out));
        }
        if acc.n_predicted > 0 {
            let n = acc.n_predicted as f64;
            acc.total /= n;
            acc.ce /= n;
            acc.r_ind /= n;
            acc.r_hh /= n;
        }
        let val = if split.val.is_empty() {
            None
        } else {
            match evaluate(&params, cfg, samples, &split.val, activity_weights, settings.batch_size) {
                Ok(v) => Some(v),
                Err(Error::NumericFault { .. }) => return Err(diverged(epoch, out)),
                Err(e) => return Err(e),
            }
        };
        let score = val.filter(|v| v.n_predicted > 0).map_or(acc.total, |v| v.total);
        log::info!("epoch {epoch}: train {:.4} val {:?}", acc.total, val.map(|v| v.total));
        out.history.push(EpochLog { epoch, train: acc, val });
        if score < best {
            best = score;
            out.best_epoch = epoch;
            out.params = params.clone();
        }
    }
    if out.best_epoch == 0 {
        out.params = params;
    }
    Ok(out)
}

fn diverged(epoch: usize, last: TrainOutput) -> Error {
    Error::Diverged {
        epoch,
        last_finite: Box::new(last),
    }
}
