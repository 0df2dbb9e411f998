use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::io::ChainSet;
use crate::schedule::{encode_chain, ActivityType, Gender, HeadSelection, Household, Person, SlotGrid, SLOTS};

/// Width of the per-person attribute vector.
pub const FEATURE_DIM: usize = 12;

pub fn person_features(h: &Household, p: &Person) -> [f64; FEATURE_DIM] {
    let b = |x: bool| if x { 1.0 } else { 0.0 };
    [
        p.age.min(100) as f64 / 100.0,
        b(p.employed),
        b(p.student),
        p.education as f64 / 5.0,
        b(p.has_license),
        b(p.gender == Gender::Male),
        b(p.gender == Gender::Female),
        b(p.gender == Gender::Other),
        b(p.is_adult()),
        h.income as f64 / 10.0,
        h.vehicles.min(8) as f64 / 4.0,
        h.size() as f64 / 8.0,
    ]
}

/// A normalized household (head first, at most `P_MAX` members) with its slot grid.
#[derive(Clone, Debug, PartialEq)]
pub struct HouseholdSample {
    pub household: Household,
    pub grid: SlotGrid,
}

/// Pairs every household with its members' chains, normalizing the roster.
pub fn build_samples(households: &[Household], chains: &ChainSet, policy: &HeadSelection) -> Result<Vec<HouseholdSample>> {
    let mut counts: HashMap<u64, usize> = HashMap::new();
    for hid in chains.household_of.values() {
        *counts.entry(*hid).or_default() += 1;
    }
    households
        .iter()
        .map(|h| {
            let own = counts.get(&h.household_id).copied().unwrap_or(0);
            let Some(list) = chains.for_household(h) else {
                return Err(Error::Arity {
                    household_id: h.household_id,
                    members: h.size(),
                    chains: own,
                });
            };
            if own != h.size() {
                return Err(Error::Arity {
                    household_id: h.household_id,
                    members: h.size(),
                    chains: own,
                });
            }
            let hn = h.normalized(policy);
            let rows = hn
                .members
                .iter()
                .map(|p| {
                    let c = list.iter().find(|c| c.person_id == p.person_id).expect("chain present");
                    encode_chain(c)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(HouseholdSample {
                grid: SlotGrid::from_rows(&rows)?,
                household: hn,
            })
        })
        .collect()
}

/// Dense tensors for `size` households padded to `persons` rows each.
#[derive(Clone, Debug)]
pub struct Batch {
    pub size: usize,
    pub persons: usize,
    /// `[size × persons × SLOTS]`, PAD for masked persons.
    pub codes: Vec<ActivityType>,
    /// `[size·persons × FEATURE_DIM]`, zero for masked persons.
    pub features: Vec<f64>,
    /// `[size × persons]`
    pub valid: Vec<bool>,
}

impl Batch {
    pub fn new(samples: &[&HouseholdSample], persons: usize) -> Self {
        let n = samples.len();
        let mut codes = vec![ActivityType::PAD; n * persons * SLOTS];
        let mut features = vec![0.0; n * persons * FEATURE_DIM];
        let mut valid = vec![false; n * persons];
        for (b, s) in samples.iter().enumerate() {
            for (p, person) in s.household.members.iter().enumerate().take(persons) {
                let r = b * persons + p;
                valid[r] = true;
                features[r * FEATURE_DIM..(r + 1) * FEATURE_DIM]
                    .copy_from_slice(&person_features(&s.household, person));
                codes[r * SLOTS..(r + 1) * SLOTS].copy_from_slice(&s.grid.rows[p]);
            }
        }
        Self {
            size: n,
            persons,
            codes,
            features,
            valid,
        }
    }

    /// A batch padded to the largest household it contains.
    pub fn fit(samples: &[&HouseholdSample]) -> Self {
        let p = samples.iter().map(|s| s.household.size()).max().unwrap_or(1);
        Self::new(samples, p)
    }

    pub fn code(&self, b: usize, p: usize, t: usize) -> ActivityType {
        self.codes[(b * self.persons + p) * SLOTS + t]
    }

    pub fn is_valid(&self, b: usize, p: usize) -> bool {
        self.valid[b * self.persons + p]
    }

    /// True where the model is scored: valid, non-head persons.
    pub fn predicted(&self, b: usize, p: usize) -> bool {
        p >= 1 && self.is_valid(b, p)
    }

    /// Logit row index of `(b, t, p)` in output order.
    pub fn out_row(&self, b: usize, t: usize, p: usize) -> usize {
        (b * SLOTS + t) * self.persons + p
    }
}
