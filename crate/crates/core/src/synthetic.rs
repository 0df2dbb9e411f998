//! Synthetic ground-truth corpora with planted household coordination rules.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::coordination::{build_event_table, infer_roles, solo_share, EventOptions, Role};
use crate::error::{Error, Result};
use crate::io::{write_activities, write_json, write_population, ChainSet};
use crate::schedule::{
    select_household_head, Activity, ActivityCatalog, ActivityChain, ActivityType, Gender, HeadSelection, Household, Person, DAY_MINUTES, N_TYPES,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticRuleSet {
    /// Probability the spouse joins the head's evening Meal.
    pub spouse_joins_meal: f64,
    /// Probability a household's school children are escorted by an adult.
    pub escort_school: f64,
    /// Probability the head has an evening Meal out.
    pub head_meal: f64,
    pub spouse: f64,
    /// Distribution of the number of children, index = count.
    pub children: Vec<f64>,
    pub employed: f64,
    pub worker_errand: f64,
    /// Probability a worker leaves Work for a midday errand.
    pub lunch_errand: f64,
    pub nonworker_errand: f64,
    pub child_recreation: f64,
    /// Everyone stays Home all day.
    pub all_home: bool,
    pub zones: Vec<u32>,
}

impl Default for SyntheticRuleSet {
    fn default() -> Self {
        Self {
            spouse_joins_meal: 0.8,
            escort_school: 0.7,
            head_meal: 0.35,
            spouse: 0.6,
            children: vec![0.55, 0.28, 0.13, 0.04],
            employed: 0.75,
            worker_errand: 0.5,
            lunch_errand: 0.5,
            nonworker_errand: 0.7,
            child_recreation: 0.3,
            all_home: false,
            zones: vec![1],
        }
    }
}

impl SyntheticRuleSet {
    pub fn validate(&self) -> Result<()> {
        let probs = [
            self.spouse_joins_meal,
            self.escort_school,
            self.head_meal,
            self.spouse,
            self.employed,
            self.worker_errand,
            self.lunch_errand,
            self.nonworker_errand,
            self.child_recreation,
        ];
        if probs.iter().chain(&self.children).any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Config("synthetic rule probabilities must lie in [0, 1]".into()));
        }
        let s: f64 = self.children.iter().sum();
        if self.children.is_empty() || (s - 1.0).abs() > 1e-9 {
            return Err(Error::Config("child-count distribution must sum to 1".into()));
        }
        if self.children.len() > 7 {
            return Err(Error::Config("at most 6 children".into()));
        }
        if self.zones.is_empty() {
            return Err(Error::Config("synthetic corpus needs at least one home zone".into()));
        }
        Ok(())
    }
}

/// Minute timeline painted with activity types, compressed to a chain at the end.
struct Day([ActivityType; DAY_MINUTES as usize]);

impl Day {
    fn new() -> Self {
        Self([ActivityType::HOME; DAY_MINUTES as usize])
    }

    fn paint(&mut self, kind: ActivityType, start: u32, end: u32) {
        for m in start.min(DAY_MINUTES)..end.min(DAY_MINUTES) {
            self.0[m as usize] = kind;
        }
    }

    fn is_home(&self, start: u32, end: u32) -> bool {
        (start..end.min(DAY_MINUTES)).all(|m| self.0[m as usize] == ActivityType::HOME)
    }

    fn chain(&self, person_id: u64) -> ActivityChain {
        let mut acts: Vec<Activity> = Vec::new();
        for (m, &k) in self.0.iter().enumerate() {
            match acts.last_mut() {
                Some(a) if a.kind == k => a.end = m as u32 + 1,
                _ => acts.push(Activity::new(k, m as u32, m as u32 + 1)),
            }
        }
        ActivityChain::new(person_id, acts)
    }
}

fn q15(rng: &mut impl Rng, lo: u32, hi: u32) -> u32 {
    15 * rng.gen_range(lo / 15..=hi / 15)
}

const ERRANDS: [ActivityType; 4] = [ActivityType::BUY_GOODS, ActivityType::BUY_SERVICES, ActivityType::EXERCISE, ActivityType::RECREATION];
const DAYTIME: [ActivityType; 3] = [ActivityType::VISIT, ActivityType::HEALTH_CARE, ActivityType::GENERAL_ERRANDS];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalyticTargets {
    pub joint_meal_rate: f64,
    pub escort_rate: f64,
    /// Only known in closed form for the all-Home rule.
    pub type_shares: Option<BTreeMap<String, f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoordinationStats {
    /// Households with a spouse whose head has a Meal.
    pub meal_households: usize,
    pub joint_meal_rate: Option<f64>,
    /// School activities of children.
    pub school_activities: usize,
    pub escort_rate: Option<f64>,
    pub events: usize,
    pub solo_share: f64,
    pub type_shares: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetStats {
    pub analytic: AnalyticTargets,
    pub empirical: CoordinationStats,
}

#[derive(Clone, Debug)]
pub struct SyntheticCorpus {
    pub households: Vec<Household>,
    pub chains: ChainSet,
    pub targets: TargetStats,
}

fn person(id: u64, age: u32, employed: bool, student: bool, gender: Gender, rng: &mut impl Rng) -> Person {
    Person {
        person_id: id,
        age,
        employed,
        student,
        education: if age < 18 { 0 } else { rng.gen_range(1..=5) },
        has_license: age >= 18,
        gender,
    }
}

fn sample_household(rules: &SyntheticRuleSet, household_id: u64, rng: &mut impl Rng) -> (Household, Vec<ActivityChain>) {
    let a_age = rng.gen_range(28..=60);
    let g = if rng.gen_bool(0.5) { Gender::Male } else { Gender::Female };
    let other = if g == Gender::Male { Gender::Female } else { Gender::Male };
    let mut members = vec![person(household_id * 10, a_age, rng.gen_bool(rules.employed), false, g, rng)];
    if rng.gen_bool(rules.spouse) {
        let age = (a_age as i32 + rng.gen_range(-5..=5)) as u32;
        members.push(person(household_id * 10 + 1, age, rng.gen_bool(rules.employed), false, other, rng));
    }
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut n_children = rules.children.len() - 1;
    for (k, p) in rules.children.iter().enumerate() {
        acc += p;
        if u < acc {
            n_children = k;
            break;
        }
    }
    let youngest = members.iter().map(|p| p.age).min().unwrap();
    for c in 0..n_children {
        let age = rng.gen_range(5..=(youngest - 18).min(17));
        let id = household_id * 10 + 2 + c as u64;
        let g = if rng.gen_bool(0.5) { Gender::Male } else { Gender::Female };
        members.push(person(id, age, false, true, g, rng));
    }
    let h = Household {
        household_id,
        income: rng.gen_range(1..=10),
        vehicles: rng.gen_range(0..=2),
        home_taz: *rules.zones.choose(rng).unwrap(),
        members,
    };
    let n = h.members.len();
    let mut days: Vec<Day> = (0..n).map(|_| Day::new()).collect();
    if rules.all_home {
        let chains = h.members.iter().zip(&days).map(|(p, d)| d.chain(p.person_id)).collect();
        return (h, chains);
    }
    let head = select_household_head(&h, &HeadSelection::default());
    let adults: Vec<usize> = (0..n).filter(|&i| h.members[i].age >= 18).collect();
    let spouse = adults.iter().copied().find(|&i| i != head);
    let kids: Vec<usize> = (0..n).filter(|&i| h.members[i].student).collect();

    // Household school start drives the head's morning.
    let school_start = q15(rng, 450, 510);
    let escort = !kids.is_empty() && rng.gen_bool(rules.escort_school);
    let escort_by = spouse.filter(|&s| !h.members[s].employed).unwrap_or(head);

    for &i in &adults {
        let p = &h.members[i];
        let d = &mut days[i];
        if p.employed {
            let start = if i == head { school_start + 30 } else { school_start + q15(rng, 75, 120) };
            let end = start + q15(rng, 480, 570);
            d.paint(ActivityType::WORK, start, end);
            if rng.gen_bool(rules.lunch_errand) {
                let s = q15(rng, 690, 780);
                let k = *ERRANDS.choose(rng).unwrap();
                d.paint(k, s, s + q15(rng, 30, 60));
            }
            if rng.gen_bool(rules.worker_errand) {
                let s = end + q15(rng, 15, 45);
                let k = *ERRANDS.choose(rng).unwrap();
                d.paint(k, s, s + q15(rng, 30, 90));
            }
        } else {
            if rng.gen_bool(rules.nonworker_errand) {
                let s = q15(rng, 540, 690);
                let k = *ERRANDS.choose(rng).unwrap();
                d.paint(k, s, s + q15(rng, 45, 120));
            }
            if rng.gen_bool(0.3) {
                let s = q15(rng, 840, 960);
                let k = *DAYTIME.choose(rng).unwrap();
                d.paint(k, s, s + q15(rng, 30, 90));
            }
        }
    }
    let school_end = school_start + q15(rng, 390, 450);
    for &c in &kids {
        let d = &mut days[c];
        d.paint(ActivityType::SCHOOL, school_start, school_end);
        if rng.gen_bool(rules.child_recreation) {
            let s = school_end + q15(rng, 30, 90);
            d.paint(ActivityType::RECREATION, s, s + q15(rng, 45, 90));
        }
    }
    if escort {
        days[escort_by].paint(ActivityType::ESCORT, school_start, school_start + 15);
    }
    if rng.gen_bool(rules.head_meal) {
        let s = q15(rng, 1110, 1200);
        let e = s + q15(rng, 60, 90);
        days[head].paint(ActivityType::MEAL, s, e);
        if let Some(sp) = spouse {
            if rng.gen_bool(rules.spouse_joins_meal) {
                days[sp].paint(ActivityType::MEAL, s, e);
            } else if !days[sp].is_home(s, e) {
                days[sp].paint(ActivityType::HOME, s, e);
            }
        }
    }
    let chains = h.members.iter().zip(&days).map(|(p, d)| d.chain(p.person_id)).collect();
    (h, chains)
}

pub fn generate_synthetic_corpus(rules: &SyntheticRuleSet, n_households: usize, rng_seed: u64) -> Result<SyntheticCorpus> {
    rules.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut households = Vec::with_capacity(n_households);
    let mut chains = ChainSet::default();
    for i in 0..n_households {
        let (h, cs) = sample_household(rules, i as u64 + 1, &mut rng);
        for c in cs {
            chains.insert(h.household_id, c);
        }
        households.push(h);
    }
    let catalog = ActivityCatalog::default();
    let empirical = coordination_stats(&households, &chains, &catalog, &HeadSelection::default(), &EventOptions::default())?;
    let type_shares = rules.all_home.then(|| {
        let mut m = BTreeMap::new();
        m.insert(catalog.label(ActivityType::HOME).to_string(), 1.0);
        m
    });
    Ok(SyntheticCorpus {
        households,
        chains,
        targets: TargetStats {
            analytic: AnalyticTargets {
                joint_meal_rate: rules.spouse_joins_meal,
                escort_rate: rules.escort_school,
                type_shares,
            },
            empirical,
        },
    })
}

pub const HOUSEHOLDS_FILE: &str = "households.csv";
pub const TARGETS_FILE: &str = "targets.json";

pub fn write_corpus(dir: &Path, corpus: &SyntheticCorpus, catalog: &ActivityCatalog) -> Result<()> {
    write_population(&dir.join(HOUSEHOLDS_FILE), &corpus.households, None)?;
    write_activities(&dir.join(crate::validate::ACTIVITIES_FILE), &corpus.chains, catalog)?;
    write_json(&dir.join(TARGETS_FILE), &corpus.targets)
}

/// Planted-rule rates measured through the event table: joint Meal of head and spouse,
/// and child School activities sharing an event with an Escort.
pub fn coordination_stats(
    households: &[Household],
    chains: &ChainSet,
    catalog: &ActivityCatalog,
    policy: &HeadSelection,
    opts: &EventOptions,
) -> Result<CoordinationStats> {
    let mut meal_households = 0usize;
    let mut joint = 0usize;
    let mut school = 0usize;
    let mut escorted = 0usize;
    let mut all_events = Vec::new();
    let mut type_counts = [0.0; N_TYPES];
    for h in households {
        let cs = chains.for_household(h).ok_or_else(|| Error::Arity {
            household_id: h.household_id,
            members: h.size(),
            chains: 0,
        })?;
        for a in cs.iter().flat_map(|c| &c.activities) {
            type_counts[a.kind.index()] += 1.0;
        }
        let events = build_event_table(h, &cs, catalog, policy, opts)?;
        let head = h.members[select_household_head(h, policy)].person_id;
        let head_chain = cs.iter().find(|c| c.person_id == head).unwrap();
        let has_spouse = infer_roles(h, select_household_head(h, policy), &opts.roles).contains(&Role::Spouse);
        if has_spouse && head_chain.activities.iter().any(|a| a.kind == ActivityType::MEAL) {
            meal_households += 1;
            let j = events.iter().any(|e| {
                e.activity_type == ActivityType::MEAL
                    && e.participants.iter().any(|p| p.person_id == head)
                    && e.participants.iter().any(|p| p.role == Role::Spouse && p.kind == ActivityType::MEAL)
            });
            joint += j as usize;
        }
        for e in &events {
            for _ in e.participants.iter().filter(|p| p.role == Role::Child && p.kind == ActivityType::SCHOOL) {
                school += 1;
                if e.participants.iter().any(|q| q.kind == ActivityType::ESCORT) {
                    escorted += 1;
                }
            }
        }
        all_events.extend(events);
    }
    let total: f64 = type_counts.iter().sum();
    let type_shares = ActivityType::all()
        .filter(|t| type_counts[t.index()] > 0.0)
        .map(|t| (catalog.label(t).to_string(), type_counts[t.index()] / total))
        .collect();
    Ok(CoordinationStats {
        meal_households,
        joint_meal_rate: (meal_households > 0).then(|| joint as f64 / meal_households as f64),
        school_activities: school,
        escort_rate: (school > 0).then(|| escorted as f64 / school as f64),
        events: all_events.len(),
        solo_share: solo_share(&all_events),
        type_shares,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_home_rule() {
        let rules = SyntheticRuleSet {
            all_home: true,
            ..SyntheticRuleSet::default()
        };
        let c = generate_synthetic_corpus(&rules, 50, 1).unwrap();
        assert!(c.chains.chains.values().all(|ch| ch.activities.len() == 1 && ch.activities[0].kind == ActivityType::HOME));
        assert_eq!(c.targets.empirical.type_shares.len(), 1);
        assert_eq!(c.targets.analytic.type_shares.as_ref().unwrap()["Home"], 1.0);
    }

    #[test]
    fn corpus_is_valid_and_reproducible() {
        let rules = SyntheticRuleSet::default();
        let a = generate_synthetic_corpus(&rules, 300, 9).unwrap();
        let b = generate_synthetic_corpus(&rules, 300, 9).unwrap();
        assert_eq!(a.households, b.households);
        assert_eq!(a.chains.chains, b.chains.chains);
        for c in a.chains.chains.values() {
            c.validate().unwrap();
            assert!(c.activities.iter().all(|x| x.start % 15 == 0));
        }
        assert!(SyntheticRuleSet { escort_school: 1.5, ..rules }.validate().is_err());
    }

    #[test]
    fn planted_rates_within_binomial_interval() {
        let rules = SyntheticRuleSet {
            spouse: 1.0,
            head_meal: 1.0,
            ..SyntheticRuleSet::default()
        };
        let c = generate_synthetic_corpus(&rules, 10_000, 4).unwrap();
        let e = &c.targets.empirical;
        assert_eq!(e.meal_households, 10_000);
        let r = e.joint_meal_rate.unwrap();
        assert!((0.78..=0.82).contains(&r), "{r}");
        let q = e.escort_rate.unwrap();
        assert!((0.67..=0.73).contains(&q), "{q}");
        assert!(c.targets.empirical.solo_share < 1.0);
        let d = generate_synthetic_corpus(&SyntheticRuleSet::default(), 5000, 1).unwrap();
        assert!(d.targets.empirical.solo_share >= 0.85, "{}", d.targets.empirical.solo_share);
    }
}
