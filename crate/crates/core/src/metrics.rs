//! Distributional comparison metrics and the distribution builders behind each report slice.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schedule::{ActivityCatalog, ActivityChain, ActivityType, DAY_MINUTES, N_TYPES, SLOTS, SLOT_MINUTES};

pub const NORM_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Distribution {
    pub labels: Vec<String>,
    pub probs: Vec<f64>,
}

impl Distribution {
    pub fn new(labels: Vec<String>, probs: Vec<f64>) -> Result<Self> {
        if labels.len() != probs.len() {
            return Err(Error::Config(format!("{} labels for {} probabilities", labels.len(), probs.len())));
        }
        let d = Self { labels, probs };
        d.check("distribution")?;
        Ok(d)
    }

    /// Normalizes non-negative counts; an all-zero vector is rejected.
    pub fn from_counts(labels: Vec<String>, counts: &[f64]) -> Result<Self> {
        let sum: f64 = counts.iter().sum();
        if !(sum > 0.0) || counts.iter().any(|c| *c < 0.0) {
            return Err(Error::Normalization { label: "counts".into(), sum });
        }
        Self::new(labels, counts.iter().map(|c| c / sum).collect())
    }

    pub fn support_size(&self) -> usize {
        self.probs.iter().filter(|p| **p > 0.0).count()
    }

    fn check(&self, label: &str) -> Result<()> {
        let sum: f64 = self.probs.iter().sum();
        if (sum - 1.0).abs() > NORM_TOL || self.probs.iter().any(|p| !(*p >= 0.0)) {
            return Err(Error::Normalization { label: label.into(), sum });
        }
        Ok(())
    }
}

fn kl2(p: &[f64], m: &[f64]) -> f64 {
    p.iter().zip(m).filter(|(p, _)| **p > 0.0).map(|(p, m)| p * (p / m).log2()).sum()
}

/// Base-2 Jensen-Shannon divergence of two aligned probability vectors.
pub fn jsd_raw(p: &[f64], q: &[f64]) -> f64 {
    let m: Vec<f64> = p.iter().zip(q).map(|(a, b)| 0.5 * (a + b)).collect();
    let v = 0.5 * kl2(p, &m) + 0.5 * kl2(q, &m);
    v.clamp(0.0, 1.0)
}

/// JSD over the union of both label sets, missing labels zero-filled.
pub fn jsd(p: &Distribution, q: &Distribution) -> Result<f64> {
    p.check("P")?;
    q.check("Q")?;
    let mut idx: BTreeMap<&str, usize> = BTreeMap::new();
    for l in p.labels.iter().chain(&q.labels) {
        let n = idx.len();
        idx.entry(l.as_str()).or_insert(n);
    }
    let align = |d: &Distribution| {
        let mut v = vec![0.0; idx.len()];
        for (l, x) in d.labels.iter().zip(&d.probs) {
            v[idx[l.as_str()]] += x;
        }
        v
    };
    Ok(jsd_raw(&align(p), &align(q)))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mape {
    /// Percent.
    pub value: f64,
    pub included: usize,
    pub excluded: usize,
}

/// Mean absolute percentage error; entries with `|obs| < eps` are excluded and counted.
pub fn mape(pred: &[f64], obs: &[f64], eps: f64) -> Result<Mape> {
    if pred.len() != obs.len() {
        return Err(Error::UndefinedMetric(format!("MAPE over series of length {} and {}", pred.len(), obs.len())));
    }
    let mut sum = 0.0;
    let mut included = 0;
    for (p, o) in pred.iter().zip(obs) {
        if o.abs() >= eps {
            sum += (p - o).abs() / o.abs();
            included += 1;
        }
    }
    if included == 0 {
        return Err(Error::UndefinedMetric("MAPE with every observation excluded".into()));
    }
    Ok(Mape {
        value: 100.0 * sum / included as f64,
        included,
        excluded: pred.len() - included,
    })
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::UndefinedMetric("cosine similarity over different shapes".into()));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::UndefinedMetric("cosine similarity of a zero matrix".into()));
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Flattens two sparse OD matrices over the union of their zones.
pub fn align_od(a: &BTreeMap<(u32, u32), u64>, b: &BTreeMap<(u32, u32), u64>) -> (Vec<f64>, Vec<f64>) {
    let mut zones: Vec<u32> = a.keys().chain(b.keys()).flat_map(|(o, d)| [*o, *d]).collect();
    zones.sort_unstable();
    zones.dedup();
    let mut va = Vec::with_capacity(zones.len() * zones.len());
    let mut vb = Vec::with_capacity(zones.len() * zones.len());
    for o in &zones {
        for d in &zones {
            va.push(a.get(&(*o, *d)).copied().unwrap_or(0) as f64);
            vb.push(b.get(&(*o, *d)).copied().unwrap_or(0) as f64);
        }
    }
    (va, vb)
}

pub fn type_labels(catalog: &ActivityCatalog) -> Vec<String> {
    ActivityType::all().map(|t| catalog.label(t).to_string()).collect()
}

/// Per-slot activity-type counts `[96][15]`, from minute-level chains (a slot takes the type
/// active at its midpoint).
pub fn slot_type_counts(chains: &[ActivityChain]) -> Vec<[f64; N_TYPES]> {
    let mut out = vec![[0.0; N_TYPES]; SLOTS];
    for c in chains {
        for (s, row) in out.iter_mut().enumerate() {
            let mid = s as u32 * SLOT_MINUTES + SLOT_MINUTES / 2;
            if let Some(a) = c.activities.iter().find(|a| a.start <= mid && mid < a.end) {
                row[a.kind.index()] += 1.0;
            }
        }
    }
    out
}

/// Activity instance counts by type.
pub fn type_counts(chains: &[ActivityChain]) -> [f64; N_TYPES] {
    let mut out = [0.0; N_TYPES];
    for a in chains.iter().flat_map(|c| &c.activities) {
        out[a.kind.index()] += 1.0;
    }
    out
}

/// Start-time histogram in 15-minute bins.
pub fn start_time_counts(chains: &[ActivityChain]) -> Vec<f64> {
    let mut out = vec![0.0; SLOTS];
    for a in chains.iter().flat_map(|c| &c.activities) {
        out[((a.start.min(DAY_MINUTES - 1)) / SLOT_MINUTES) as usize] += 1.0;
    }
    out
}

/// Histogram of activities per person, index k = k+1 activities.
pub fn activity_count_histogram(chains: &[ActivityChain], max: usize) -> Vec<f64> {
    let mut out = vec![0.0; max];
    for c in chains {
        out[c.activities.len().clamp(1, max) - 1] += 1.0;
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quartiles {
    pub n: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

/// Linear-interpolation quantiles of a non-empty sample.
pub fn quartiles(values: &[f64]) -> Option<Quartiles> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let q = |f: f64| {
        let pos = f * (v.len() - 1) as f64;
        let i = pos.floor() as usize;
        let j = (i + 1).min(v.len() - 1);
        v[i] + (pos - i as f64) * (v[j] - v[i])
    };
    Some(Quartiles {
        n: v.len(),
        min: v[0],
        q1: q(0.25),
        median: q(0.5),
        q3: q(0.75),
        max: v[v.len() - 1],
    })
}

/// Duration quartiles (minutes) per type present.
pub fn duration_quartiles(chains: &[ActivityChain]) -> BTreeMap<ActivityType, Quartiles> {
    let mut by: BTreeMap<ActivityType, Vec<f64>> = BTreeMap::new();
    for a in chains.iter().flat_map(|c| &c.activities) {
        by.entry(a.kind).or_default().push(a.duration() as f64);
    }
    by.into_iter().filter_map(|(k, v)| quartiles(&v).map(|q| (k, q))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::Activity;

    fn d(p: &[f64]) -> Distribution {
        Distribution::new((0..p.len()).map(|i| i.to_string()).collect(), p.to_vec()).unwrap()
    }

    #[test]
    fn jsd_hand_value() {
        let v = jsd(&d(&[0.5, 0.5]), &d(&[1.0, 0.0])).unwrap();
        // 0.5·[0.5·log2(2/3) + 0.5·log2(2)] + 0.5·log2(4/3)
        let oracle = 0.5 * (0.5 * (0.5f64 / 0.75).log2() + 0.5 * (0.5f64 / 0.25).log2()) + 0.5 * (1.0f64 / 0.75).log2();
        assert!((v - oracle).abs() < 1e-12);
        assert!((v - 0.3113).abs() < 1e-4);
    }

    #[test]
    fn jsd_rejects_unnormalized_and_aligns_labels() {
        let bad = Distribution { labels: vec!["a".into()], probs: vec![0.9] };
        assert!(matches!(jsd(&bad, &bad), Err(Error::Normalization { .. })));
        let p = Distribution::new(vec!["a".into()], vec![1.0]).unwrap();
        let q = Distribution::new(vec!["b".into()], vec![1.0]).unwrap();
        assert!((jsd(&p, &q).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mape_examples() {
        assert_eq!(mape(&[90.0, 110.0], &[100.0, 100.0], 1e-9).unwrap().value, 10.0);
        let m = mape(&[1.0, 5.0], &[0.0, 4.0], 1e-9).unwrap();
        assert_eq!((m.excluded, m.included), (1, 1));
        assert!((m.value - 25.0).abs() < 1e-12);
        assert!(matches!(mape(&[1.0], &[0.0], 1e-9), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn cosine_examples() {
        assert!((cosine_similarity(&[1.0, 2.0, 3.0, 4.0], &[2.0, 4.0, 6.0, 8.0]).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert!(cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn builders_count_simple_days() {
        let home = ActivityChain::all_home(1);
        let hwh = ActivityChain::new(2, vec![Activity::new(ActivityType::HOME, 0, 480), Activity::new(ActivityType::WORK, 480, 1020), Activity::new(ActivityType::HOME, 1020, 1440)]);
        let tc = type_counts(std::slice::from_ref(&home));
        assert_eq!(tc[0], 1.0);
        assert_eq!(tc.iter().sum::<f64>(), 1.0);
        assert_eq!(activity_count_histogram(&[home.clone()], 10)[0], 1.0);
        let st = start_time_counts(std::slice::from_ref(&hwh));
        assert_eq!((st[0], st[32], st[68]), (1.0, 1.0, 1.0));
        assert_eq!(st.iter().sum::<f64>(), 3.0);
        assert_eq!(activity_count_histogram(&[hwh.clone()], 10)[2], 1.0);
        let slots = slot_type_counts(&[hwh]);
        assert_eq!(slots[40][ActivityType::WORK.index()], 1.0);
        assert_eq!(slots[31][ActivityType::HOME.index()], 1.0);
        let q = quartiles(&[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert_eq!((q.q1, q.median, q.q3), (2.0, 3.0, 4.0));
    }
}
