#![allow(dead_code)]

use std::collections::BTreeMap;

use hhdemand::coordination::{Event, EventOptions};
use hhdemand::location::{is_compatible, is_mandatory, LocatedActivity, LocationParams, Samplers, Zone, ZoneTable};
use hhdemand::pipeline::{build_events, locate_population, Located};
use hhdemand::schedule::{Activity, ActivityCatalog, ActivityChain, ActivityType, Gender, HeadSelection, Household, Person, DAY_MINUTES};
use hhdemand::synthetic::{generate_synthetic_corpus, SyntheticRuleSet};
use rand::Rng;

pub const WINDOW: u32 = 15;

const KINDS: [ActivityType; 5] = [ActivityType::WORK, ActivityType::SCHOOL, ActivityType::MEAL, ActivityType::ESCORT, ActivityType::BUY_GOODS];

/// A household of 1..=3 members, each with at most 6 activities, starts clustered in one
/// morning hour so that many cross-member pairs are compatible.
pub fn random_household(id: u64, rng: &mut impl Rng) -> (Household, Vec<ActivityChain>) {
    let n = rng.gen_range(1..=3);
    let members: Vec<Person> = (0..n)
        .map(|i| Person {
            person_id: id * 10 + i as u64,
            age: [45, 42, 12][i],
            employed: i == 0,
            student: i == 2,
            education: 2,
            has_license: i < 2,
            gender: if i == 1 { Gender::Female } else { Gender::Male },
        })
        .collect();
    let chains = members
        .iter()
        .map(|p| {
            let mut acts = Vec::new();
            let mut t = 420 + 5 * rng.gen_range(0..12);
            acts.push(Activity::new(ActivityType::HOME, 0, t));
            for _ in 0..rng.gen_range(0..=4) {
                let d = 5 * rng.gen_range(1..=6);
                acts.push(Activity::new(KINDS[rng.gen_range(0..KINDS.len())], t, t + d));
                t += d;
            }
            acts.push(Activity::new(ActivityType::HOME, t, DAY_MINUTES));
            ActivityChain::new(p.person_id, acts)
        })
        .collect();
    (
        Household {
            household_id: id,
            members,
            income: 3,
            vehicles: 1,
            home_taz: 1,
        },
        chains,
    )
}

/// `(person, kind, start)` of every non-Home activity.
pub fn items_of(chains: &[ActivityChain]) -> Vec<(usize, ActivityType, u32)> {
    let mut v = Vec::new();
    for (p, c) in chains.iter().enumerate() {
        for a in &c.activities {
            if a.kind != ActivityType::HOME {
                v.push((p, a.kind, a.start));
            }
        }
    }
    v
}

/// A group is a valid event: one activity per person, starts within the window, and every
/// non-escort member of one type.
pub fn valid_group(items: &[(usize, ActivityType, u32)]) -> bool {
    let lo = items.iter().map(|i| i.2).min().unwrap();
    let hi = items.iter().map(|i| i.2).max().unwrap();
    let mut persons: Vec<usize> = items.iter().map(|i| i.0).collect();
    persons.sort_unstable();
    persons.dedup();
    let mut kinds: Vec<ActivityType> = items.iter().map(|i| i.1).filter(|&k| k != ActivityType::ESCORT).collect();
    kinds.sort_unstable();
    kinds.dedup();
    persons.len() == items.len() && hi - lo <= WINDOW && kinds.len() <= 1
}

/// Fewest events over every partition of `items` into valid groups, by exhaustive enumeration.
pub fn brute_force_min_events(items: &[(usize, ActivityType, u32)]) -> usize {
    fn go(items: &[(usize, ActivityType, u32)], i: usize, groups: &mut Vec<Vec<(usize, ActivityType, u32)>>, best: &mut usize) {
        if i == items.len() {
            *best = (*best).min(groups.len());
            return;
        }
        for g in 0..groups.len() {
            groups[g].push(items[i]);
            if valid_group(&groups[g]) {
                go(items, i + 1, groups, best);
            }
            groups[g].pop();
        }
        groups.push(vec![items[i]]);
        go(items, i + 1, groups, best);
        groups.pop();
    }
    let mut best = usize::MAX;
    go(items, 0, &mut Vec::new(), &mut best);
    if items.is_empty() {
        0
    } else {
        best
    }
}

/// The event table covers every non-Home activity exactly once in valid groups.
pub fn check_partition(h: &Household, chains: &[ActivityChain], events: &[Event]) -> Result<(), String> {
    let person_of = |id: u64| h.members.iter().position(|p| p.person_id == id).unwrap();
    let mut seen = Vec::new();
    for e in events {
        let g: Vec<_> = e.participants.iter().map(|p| (person_of(p.person_id), p.kind, p.start)).collect();
        if !valid_group(&g) {
            return Err(format!("invalid group {g:?}"));
        }
        if e.start_window.1 - e.start_window.0 > WINDOW {
            return Err(format!("window {:?}", e.start_window));
        }
        for p in &e.participants {
            let c = chains.iter().find(|c| c.person_id == p.person_id).unwrap();
            if c.activities[p.seq].start != p.start || c.activities[p.seq].kind != p.kind {
                return Err(format!("participant {p:?} does not match its chain"));
            }
            seen.push((p.person_id, p.seq));
        }
    }
    seen.sort_unstable();
    let mut want: Vec<(u64, usize)> = chains
        .iter()
        .flat_map(|c| c.activities.iter().enumerate().filter(|(_, a)| a.kind != ActivityType::HOME).map(move |(s, _)| (c.person_id, s)))
        .collect();
    want.sort_unstable();
    if seen != want {
        return Err(format!("covered {seen:?}, expected {want:?}"));
    }
    Ok(())
}

/// Five zones within 6 km, all residential, with overlapping land uses.
pub fn five_zones() -> ZoneTable {
    ZoneTable::new(vec![
        Zone::new(1, 0.0, 0.0, &["residential", "commercial"]),
        Zone::new(2, 4000.0, 0.0, &["residential", "employment", "commercial"]),
        Zone::new(3, 4000.0, 4000.0, &["residential", "education", "recreation", "commercial"]),
        Zone::new(4, 0.0, 4000.0, &["residential", "employment", "recreation", "education"]),
        Zone::new(5, 2000.0, 2000.0, &["residential", "employment", "commercial", "education", "recreation"]),
    ])
    .unwrap()
}

/// Uneven per-type targets over compatible zones.
pub fn uneven_targets(zones: &ZoneTable) -> Vec<Vec<f64>> {
    ActivityType::all()
        .map(|t| {
            let w: Vec<f64> = zones
                .zones
                .iter()
                .enumerate()
                .map(|(i, z)| if is_compatible(z, t) { 1.0 + ((i + t.index()) % 3) as f64 } else { 0.0 })
                .collect();
            let s: f64 = w.iter().sum();
            w.into_iter().map(|x| x / s).collect()
        })
        .collect()
}

/// Shares of refinable placements per type, recounted from the plans: members of a
/// coordinated event count under the event's type; Home and mandatory placements are fixed.
pub fn recount_shares(plans: &[LocatedActivity], events: &[Event], zones: &ZoneTable) -> BTreeMap<ActivityType, Vec<f64>> {
    let consensus: BTreeMap<(u64, u32), (ActivityType, bool)> = events.iter().map(|e| ((e.household_id, e.event_id), (e.activity_type, e.coordinated))).collect();
    let mut counts: BTreeMap<ActivityType, Vec<f64>> = BTreeMap::new();
    for p in plans {
        let kind = match p.event_id.map(|id| consensus[&(p.household_id, id)]) {
            Some((t, true)) => t,
            _ => p.kind,
        };
        if kind == ActivityType::HOME || is_mandatory(kind) {
            continue;
        }
        counts.entry(kind).or_insert_with(|| vec![0.0; zones.len()])[zones.index_of(p.taz).unwrap()] += 1.0;
    }
    for v in counts.values_mut() {
        let s: f64 = v.iter().sum();
        v.iter_mut().for_each(|x| *x /= s);
    }
    counts
}

pub fn locate_five_zone(n: usize, seed: u64) -> (Located, Vec<Event>, ZoneTable, Vec<Vec<f64>>) {
    let zones = five_zones();
    let rules = SyntheticRuleSet {
        zones: vec![1, 2, 3, 4, 5],
        ..SyntheticRuleSet::default()
    };
    let c = generate_synthetic_corpus(&rules, n, seed).unwrap();
    let events = build_events(&c.households, &c.chains, &ActivityCatalog::default(), &HeadSelection::default(), &EventOptions::default()).unwrap();
    let targets = uneven_targets(&zones);
    let located = locate_population(&c.households, &c.chains, &events, &zones, &Samplers::default(), &targets, &LocationParams::default(), seed).unwrap();
    (located, events, zones, targets)
}
