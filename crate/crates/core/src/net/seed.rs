//! Stratified first-order Markov model over head slot codes.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schedule::{ActivityType, Person, N_TYPES, SLOTS};

pub fn stratum_of(p: &Person) -> &'static str {
    if p.employed {
        "worker"
    } else if p.student {
        "student"
    } else {
        "other"
    }
}

pub const STRATA: [&str; 3] = ["worker", "student", "other"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transitions {
    /// Slot-0 distribution.
    pub initial: Vec<f64>,
    /// `[95][15][15]`: row `t` gives P(code at t+1 | code at t).
    pub next: Vec<Vec<Vec<f64>>>,
    pub observations: usize,
}

impl Transitions {
    fn fit<'a>(rows: impl Iterator<Item = &'a [ActivityType; SLOTS]>, alpha: f64) -> Self {
        let mut init = vec![alpha; N_TYPES];
        let mut next = vec![vec![vec![alpha; N_TYPES]; N_TYPES]; SLOTS - 1];
        let mut n = 0;
        for row in rows {
            n += 1;
            init[row[0].index()] += 1.0;
            for t in 0..SLOTS - 1 {
                next[t][row[t].index()][row[t + 1].index()] += 1.0;
            }
        }
        let norm = |v: &mut Vec<f64>| {
            let s: f64 = v.iter().sum();
            v.iter_mut().for_each(|x| *x /= s);
        };
        norm(&mut init);
        next.iter_mut().flatten().for_each(norm);
        Self {
            initial: init,
            next,
            observations: n,
        }
    }
}

/// Per-stratum transitions with a pooled fallback.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedChainModel {
    pub strata: BTreeMap<String, Transitions>,
    pub pooled: Transitions,
    pub smoothing: f64,
}

impl SeedChainModel {
    /// Fits from head rows; strata with no observations fall back to the pooled model.
    pub fn fit(heads: &[(&Person, &[ActivityType; SLOTS])], smoothing: f64) -> Result<Self> {
        if heads.is_empty() {
            return Err(Error::Config("seed model needs at least one head schedule".into()));
        }
        if let Some((_, row)) = heads.iter().find(|(_, r)| r.iter().any(|c| c.is_pad())) {
            let slot = row.iter().position(|c| c.is_pad()).unwrap();
            return Err(Error::MaskedPerson { slot });
        }
        let pooled = Transitions::fit(heads.iter().map(|(_, r)| *r), smoothing);
        let mut strata = BTreeMap::new();
        for s in STRATA {
            let rows: Vec<_> = heads.iter().filter(|(p, _)| stratum_of(p) == s).map(|(_, r)| *r).collect();
            if rows.is_empty() {
                log::warn!("seed model: no heads in stratum {s}, using pooled transitions");
                continue;
            }
            strata.insert(s.to_string(), Transitions::fit(rows.into_iter(), smoothing));
        }
        Ok(Self { strata, pooled, smoothing })
    }

    pub fn transitions_for(&self, p: &Person) -> &Transitions {
        self.strata.get(stratum_of(p)).unwrap_or(&self.pooled)
    }

    /// Samples a full day; `temperature` sharpens (<1) or flattens (>1) every step, 0 is argmax.
    pub fn sample(&self, head: &Person, temperature: f64, rng: &mut impl Rng) -> [ActivityType; SLOTS] {
        let tr = self.transitions_for(head);
        let mut row = [ActivityType::HOME; SLOTS];
        row[0] = draw(&tr.initial, temperature, rng);
        for t in 1..SLOTS {
            row[t] = draw(&tr.next[t - 1][row[t - 1].index()], temperature, rng);
        }
        row
    }
}

fn draw(p: &[f64], temperature: f64, rng: &mut impl Rng) -> ActivityType {
    let pick = |j: usize| ActivityType::from_code(j as u8).unwrap();
    if temperature <= 0.0 {
        let mut best = 0;
        for j in 1..p.len() {
            if p[j] > p[best] {
                best = j;
            }
        }
        return pick(best);
    }
    let w: Vec<f64> = p.iter().map(|x| x.powf(1.0 / temperature)).collect();
    let total: f64 = w.iter().sum();
    let mut u = rng.gen::<f64>() * total;
    for (j, x) in w.iter().enumerate() {
        if u < *x {
            return pick(j);
        }
        u -= x;
    }
    pick(w.len() - 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::Gender;
    use rand::SeedableRng;

    fn person(employed: bool, student: bool) -> Person {
        Person {
            person_id: 1,
            age: 40,
            employed,
            student,
            education: 2,
            has_license: true,
            gender: Gender::Male,
        }
    }

    #[test]
    fn never_emits_pad_and_is_deterministic() {
        let mut row = [ActivityType::HOME; SLOTS];
        row[40..70].iter_mut().for_each(|c| *c = ActivityType::WORK);
        let w = person(true, false);
        let m = SeedChainModel::fit(&[(&w, &row)], 0.1).unwrap();
        assert!(m.strata.contains_key("worker") && !m.strata.contains_key("student"));
        let mut r1 = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mut r2 = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let a = m.sample(&person(false, true), 1.0, &mut r1);
        assert_eq!(a, m.sample(&person(false, true), 1.0, &mut r2));
        assert!(a.iter().all(|c| !c.is_pad()));
        assert_eq!(m.sample(&w, 0.0, &mut r1), row);
        for t in 0..SLOTS - 1 {
            for from in 0..N_TYPES {
                let s: f64 = m.pooled.next[t][from].iter().sum();
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
    }
}
