//! Household event table: groups members' activities into shared events.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{create_writer, open_reader, row_of, Columns};
use crate::schedule::{select_household_head, ActivityCatalog, ActivityChain, ActivityType, HeadSelection, Household, N_TYPES, P_MAX};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Role {
    #[serde(rename = "Self")]
    Head,
    Spouse,
    Child,
    Parent,
    NonRelative,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Head => "Self",
            Role::Spouse => "Spouse",
            Role::Child => "Child",
            Role::Parent => "Parent",
            Role::NonRelative => "NonRelative",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "Self" => Role::Head,
            "Spouse" => Role::Spouse,
            "Child" => Role::Child,
            "Parent" => Role::Parent,
            "NonRelative" => Role::NonRelative,
            _ => return None,
        })
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Age thresholds of the role heuristic.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RoleRules {
    pub adult_age: u32,
    pub spouse_max_gap: u32,
    pub generation_gap: u32,
}

impl Default for RoleRules {
    fn default() -> Self {
        Self {
            adult_age: 18,
            spouse_max_gap: 15,
            generation_gap: 18,
        }
    }
}

/// Roles of every member relative to member `head`.
pub fn infer_roles(h: &Household, head: usize, rules: &RoleRules) -> Vec<Role> {
    let ha = h.members[head].age;
    h.members
        .iter()
        .enumerate()
        .map(|(i, p)| {
            if i == head {
                Role::Head
            } else if p.age < rules.adult_age || ha >= p.age + rules.generation_gap {
                Role::Child
            } else if p.age >= ha + rules.generation_gap {
                Role::Parent
            } else if p.age.abs_diff(ha) <= rules.spouse_max_gap {
                Role::Spouse
            } else {
                Role::NonRelative
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Participant {
    pub person_id: u64,
    pub role: Role,
    /// Index of the activity in the person's chain.
    pub seq: usize,
    pub kind: ActivityType,
    pub start: u32,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub household_id: u64,
    pub event_id: u32,
    pub activity_type: ActivityType,
    pub participants: Vec<Participant>,
    pub start_window: (u32, u32),
    pub coordinated: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EventOptions {
    /// Inclusive bound on start-time spread within an event, minutes.
    pub window: u32,
    /// Whether Home activities take part in grouping.
    pub include_home: bool,
    /// Components larger than this keep the greedy grouping.
    pub exact_limit: usize,
    pub roles: RoleRules,
}

impl Default for EventOptions {
    fn default() -> Self {
        Self {
            window: 15,
            include_home: false,
            exact_limit: 16,
            roles: RoleRules::default(),
        }
    }
}

/// One activity considered for grouping.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Item {
    pub person: usize,
    pub seq: usize,
    pub kind: ActivityType,
    pub start: u32,
    pub accompanying: bool,
}

/// Running state of a group: earliest start, persons, shared non-accompanying type.
#[derive(Clone, Debug, Default)]
struct Group {
    items: Vec<usize>,
    earliest: u32,
    persons: Vec<usize>,
    anchor_type: Option<ActivityType>,
}

impl Group {
    fn admits(&self, it: &Item, window: u32) -> bool {
        it.start.abs_diff(self.earliest) <= window
            && !self.persons.contains(&it.person)
            && (it.accompanying || self.anchor_type.is_none_or(|t| t == it.kind))
    }

    fn push(&mut self, idx: usize, it: &Item) {
        if self.items.is_empty() || it.start < self.earliest {
            self.earliest = it.start;
        }
        self.items.push(idx);
        self.persons.push(it.person);
        if !it.accompanying {
            self.anchor_type = Some(it.kind);
        }
    }
}

/// Startup-order greedy grouping: each activity joins the admissible group whose earliest
/// start is nearest, ties to the older group, or opens a new one. `items` must be sorted
/// by start.
pub fn greedy_groups(items: &[Item], window: u32) -> Vec<Vec<usize>> {
    let mut groups: Vec<Group> = Vec::new();
    for (i, it) in items.iter().enumerate() {
        let best = groups
            .iter()
            .enumerate()
            .filter(|(_, g)| g.admits(it, window))
            .min_by_key(|(gi, g)| (it.start.abs_diff(g.earliest), *gi))
            .map(|(gi, _)| gi);
        match best {
            Some(gi) => groups[gi].push(i, it),
            None => {
                let mut g = Group::default();
                g.push(i, it);
                groups.push(g);
            }
        }
    }
    groups.into_iter().map(|g| g.items).collect()
}

/// True if two activities may share an event.
pub fn pair_compatible(a: &Item, b: &Item, window: u32) -> bool {
    a.person != b.person && a.start.abs_diff(b.start) <= window && (a.kind == b.kind || a.accompanying || b.accompanying)
}

/// Fewest-groups partition of `items` (sorted by start), or `None` past `node_budget`.
pub fn exact_groups(items: &[Item], window: u32, node_budget: usize) -> Option<Vec<Vec<usize>>> {
    struct Search<'a> {
        items: &'a [Item],
        window: u32,
        groups: Vec<Group>,
        best: Option<Vec<Vec<usize>>>,
        best_len: usize,
        nodes: usize,
        budget: usize,
    }
    impl Search<'_> {
        fn go(&mut self, i: usize) -> bool {
            self.nodes += 1;
            if self.nodes > self.budget {
                return false;
            }
            if self.groups.len() >= self.best_len {
                return true;
            }
            if i == self.items.len() {
                self.best_len = self.groups.len();
                self.best = Some(self.groups.iter().map(|g| g.items.clone()).collect());
                return true;
            }
            let it = self.items[i];
            for gi in 0..self.groups.len() {
                if self.groups[gi].admits(&it, self.window) {
                    let saved = self.groups[gi].clone();
                    self.groups[gi].push(i, &it);
                    let ok = self.go(i + 1);
                    self.groups[gi] = saved;
                    if !ok {
                        return false;
                    }
                }
            }
            let mut g = Group::default();
            g.push(i, &it);
            self.groups.push(g);
            let ok = self.go(i + 1);
            self.groups.pop();
            ok
        }
    }
    let mut s = Search {
        items,
        window,
        groups: Vec::new(),
        best: None,
        best_len: items.len() + 1,
        nodes: 0,
        budget: node_budget,
    };
    s.go(0).then(|| s.best.unwrap_or_default())
}

/// Connected components of the pair-compatibility graph, each sorted.
fn components(items: &[Item], window: u32) -> Vec<Vec<usize>> {
    let n = items.len();
    let mut comp = vec![usize::MAX; n];
    let mut out = Vec::new();
    for s in 0..n {
        if comp[s] != usize::MAX {
            continue;
        }
        let id = out.len();
        let mut stack = vec![s];
        comp[s] = id;
        let mut members = Vec::new();
        while let Some(u) = stack.pop() {
            members.push(u);
            for v in 0..n {
                if comp[v] == usize::MAX && pair_compatible(&items[u], &items[v], window) {
                    comp[v] = id;
                    stack.push(v);
                }
            }
        }
        members.sort_unstable();
        out.push(members);
    }
    out
}

/// Greedy grouping, replaced per connected component by an exact fewest-events grouping
/// when greedy leaves merges on the table.
pub fn group_items(items: &[Item], window: u32, exact_limit: usize) -> Vec<Vec<usize>> {
    let greedy = greedy_groups(items, window);
    let mut of_item = vec![0; items.len()];
    for (gi, g) in greedy.iter().enumerate() {
        for &i in g {
            of_item[i] = gi;
        }
    }
    let mut out = Vec::new();
    for comp in components(items, window) {
        let mut local: Vec<usize> = comp.iter().map(|&i| of_item[i]).collect();
        local.sort_unstable();
        local.dedup();
        let greedy_here: Vec<Vec<usize>> = local.iter().map(|&gi| greedy[gi].clone()).collect();
        if comp.len() > 1 && comp.len() <= exact_limit {
            let sub: Vec<Item> = comp.iter().map(|&i| items[i]).collect();
            if let Some(best) = exact_groups(&sub, window, 2_000_000) {
                if best.len() < greedy_here.len() {
                    out.extend(best.into_iter().map(|g| g.into_iter().map(|k| comp[k]).collect::<Vec<_>>()));
                    continue;
                }
            } else {
                log::debug!("event grouping search budget exhausted; keeping greedy grouping");
            }
        }
        out.extend(greedy_here);
    }
    for g in out.iter_mut() {
        g.sort_unstable();
    }
    out.sort_by_key(|g| (items[g[0]].start, g[0]));
    out
}

fn consensus_type(kinds: &[(ActivityType, bool)]) -> ActivityType {
    let mut counts = [0usize; N_TYPES];
    let mut acc = [0usize; N_TYPES];
    for &(k, a) in kinds {
        if a {
            acc[k.index()] += 1;
        } else {
            counts[k.index()] += 1;
        }
    }
    let pick = |c: &[usize]| {
        let m = *c.iter().max().unwrap();
        (m > 0).then(|| ActivityType::from_code(c.iter().position(|&x| x == m).unwrap() as u8).unwrap())
    };
    pick(&counts).or_else(|| pick(&acc)).unwrap_or(ActivityType::ESCORT)
}

/// Builds the event table of one household. Chains may be in any order but must cover
/// every member exactly once.
pub fn build_event_table(
    h: &Household,
    chains: &[ActivityChain],
    catalog: &ActivityCatalog,
    head_policy: &HeadSelection,
    opts: &EventOptions,
) -> Result<Vec<Event>> {
    let arity = || Error::Arity {
        household_id: h.household_id,
        members: h.size(),
        chains: chains.len(),
    };
    if chains.len() != h.size() {
        return Err(arity());
    }
    let mut ordered = Vec::with_capacity(h.size());
    for p in &h.members {
        ordered.push(chains.iter().find(|c| c.person_id == p.person_id).ok_or_else(arity)?);
    }
    let roles = infer_roles(h, select_household_head(h, head_policy), &opts.roles);
    let mut items = Vec::new();
    for (person, c) in ordered.iter().enumerate() {
        for (seq, a) in c.activities.iter().enumerate() {
            if a.kind == ActivityType::HOME && !opts.include_home {
                continue;
            }
            items.push(Item {
                person,
                seq,
                kind: a.kind,
                start: a.start,
                accompanying: catalog.is_accompanying(a.kind),
            });
        }
    }
    items.sort_by_key(|it| (it.start, it.person, it.seq));
    let groups = group_items(&items, opts.window, opts.exact_limit);
    Ok(groups
        .iter()
        .enumerate()
        .map(|(e, g)| {
            let mut participants: Vec<Participant> = g
                .iter()
                .map(|&i| {
                    let it = &items[i];
                    Participant {
                        person_id: h.members[it.person].person_id,
                        role: roles[it.person],
                        seq: it.seq,
                        kind: it.kind,
                        start: it.start,
                    }
                })
                .collect();
            participants.sort_by_key(|p| (p.role, p.person_id));
            let kinds: Vec<_> = g.iter().map(|&i| (items[i].kind, items[i].accompanying)).collect();
            let lo = g.iter().map(|&i| items[i].start).min().unwrap();
            let hi = g.iter().map(|&i| items[i].start).max().unwrap();
            Event {
                household_id: h.household_id,
                event_id: e as u32 + 1,
                activity_type: consensus_type(&kinds),
                coordinated: participants.len() >= 2,
                participants,
                start_window: (lo, hi),
            }
        })
        .collect())
}

/// For each activity type, the share of its events with 1..=P_MAX participants.
pub fn participant_distribution(events: &[Event]) -> BTreeMap<ActivityType, Vec<f64>> {
    let mut counts: BTreeMap<ActivityType, Vec<f64>> = BTreeMap::new();
    for e in events {
        let row = counts.entry(e.activity_type).or_insert_with(|| vec![0.0; P_MAX]);
        row[e.participants.len().clamp(1, P_MAX) - 1] += 1.0;
    }
    for row in counts.values_mut() {
        let s: f64 = row.iter().sum();
        row.iter_mut().for_each(|v| *v /= s);
    }
    counts
}

/// Share of events with a single participant.
pub fn solo_share(events: &[Event]) -> f64 {
    if events.is_empty() {
        return 1.0;
    }
    events.iter().filter(|e| e.participants.len() == 1).count() as f64 / events.len() as f64
}

/// Role multisets of coordinated events, per type, most frequent first.
pub fn role_combinations(events: &[Event]) -> BTreeMap<ActivityType, Vec<(String, usize)>> {
    let mut tally: BTreeMap<ActivityType, BTreeMap<String, usize>> = BTreeMap::new();
    for e in events.iter().filter(|e| e.coordinated) {
        let mut roles: Vec<Role> = e.participants.iter().map(|p| p.role).collect();
        roles.sort();
        let key = roles.iter().map(|r| r.as_str()).collect::<Vec<_>>().join("+");
        *tally.entry(e.activity_type).or_default().entry(key).or_default() += 1;
    }
    tally
        .into_iter()
        .map(|(t, m)| {
            let mut v: Vec<(String, usize)> = m.into_iter().collect();
            v.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
            (t, v)
        })
        .collect()
}

/// Per-activity solo propensity: solo instances over all instances, 1 where unseen.
pub fn compute_activity_weights(events: &[Event]) -> Vec<f64> {
    let mut solo = [0usize; N_TYPES];
    let mut all = [0usize; N_TYPES];
    for e in events {
        for p in &e.participants {
            all[p.kind.index()] += 1;
            if e.participants.len() == 1 {
                solo[p.kind.index()] += 1;
            }
        }
    }
    (0..N_TYPES)
        .map(|a| if all[a] == 0 { 1.0 } else { solo[a] as f64 / all[a] as f64 })
        .collect()
}

pub const EVENT_HEADER: [&str; 8] = ["household_id", "event_id", "activity_type", "person_id", "role", "start_min", "coordinated", "seq"];

pub fn write_events(path: &Path, events: &[Event], catalog: &ActivityCatalog) -> Result<()> {
    let mut w = create_writer(path)?;
    w.write_record(EVENT_HEADER)?;
    for e in events {
        for p in &e.participants {
            w.write_record([
                e.household_id.to_string(),
                e.event_id.to_string(),
                catalog.label(e.activity_type).to_string(),
                p.person_id.to_string(),
                p.role.as_str().to_string(),
                p.start.to_string(),
                (e.coordinated as u8).to_string(),
                p.seq.to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Reads an event table; participant activity types are recovered from `chains`.
pub fn read_events(path: &Path, catalog: &ActivityCatalog, chains: &crate::io::ChainSet) -> Result<Vec<Event>> {
    let mut rdr = open_reader(path)?;
    let cols = Columns::new(rdr.headers()?, &EVENT_HEADER, path)?;
    let ps = path.display().to_string();
    let mut events: Vec<Event> = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let row = row_of(&rec);
        let hid: u64 = cols.parse(&rec, "household_id", row)?;
        let eid: u32 = cols.parse(&rec, "event_id", row)?;
        let label = cols.str(&rec, "activity_type", row)?;
        let kind = catalog
            .parse(label)
            .ok_or_else(|| Error::invariant(&ps, row, format!("unknown activity type {label}")))?;
        let pid: u64 = cols.parse(&rec, "person_id", row)?;
        let role = Role::parse(cols.str(&rec, "role", row)?).ok_or_else(|| Error::invariant(&ps, row, "unknown role"))?;
        let start: u32 = cols.parse(&rec, "start_min", row)?;
        let seq: usize = cols.parse(&rec, "seq", row)?;
        let act = chains
            .chains
            .get(&pid)
            .and_then(|c| c.activities.get(seq))
            .ok_or_else(|| Error::invariant(&ps, row, format!("person {pid} has no activity {seq}")))?;
        if act.start != start {
            return Err(Error::invariant(&ps, row, "start_min does not match the activity corpus"));
        }
        let p = Participant {
            person_id: pid,
            role,
            seq,
            kind: act.kind,
            start,
        };
        match events.last_mut() {
            Some(e) if e.household_id == hid && e.event_id == eid => {
                e.start_window = (e.start_window.0.min(start), e.start_window.1.max(start));
                e.participants.push(p);
                e.coordinated = e.participants.len() >= 2;
            }
            _ => events.push(Event {
                household_id: hid,
                event_id: eid,
                activity_type: kind,
                participants: vec![p],
                start_window: (start, start),
                coordinated: false,
            }),
        }
    }
    Ok(events)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::{Activity, Gender, Person};

    fn person(id: u64, age: u32) -> Person {
        Person {
            person_id: id,
            age,
            employed: age >= 18,
            student: age < 18,
            education: 2,
            has_license: age >= 18,
            gender: Gender::Female,
        }
    }

    fn hh(ages: &[u32]) -> Household {
        Household {
            household_id: 9,
            members: ages.iter().enumerate().map(|(i, &a)| person(i as u64 + 1, a)).collect(),
            income: 3,
            vehicles: 1,
            home_taz: 1,
        }
    }

    fn chain(pid: u64, kind: ActivityType, start: u32) -> ActivityChain {
        ActivityChain::new(
            pid,
            vec![
                Activity::new(ActivityType::HOME, 0, start),
                Activity::new(kind, start, start + 60),
                Activity::new(ActivityType::HOME, start + 60, 1440),
            ],
        )
    }

    fn events(h: &Household, c: &[ActivityChain]) -> Vec<Event> {
        build_event_table(h, c, &ActivityCatalog::default(), &HeadSelection::default(), &EventOptions::default()).unwrap()
    }

    #[test]
    fn meals_within_window_join() {
        let h = hh(&[40, 38]);
        let e = events(&h, &[chain(1, ActivityType::MEAL, 1080), chain(2, ActivityType::MEAL, 1090)]);
        assert_eq!(e.len(), 1);
        assert!(e[0].coordinated);
        assert_eq!(e[0].participants.len(), 2);
        let e = events(&h, &[chain(1, ActivityType::MEAL, 1080), chain(2, ActivityType::MEAL, 1100)]);
        assert_eq!(e.len(), 2);
        assert!(e.iter().all(|e| !e.coordinated));
        let e = events(&h, &[chain(1, ActivityType::MEAL, 1080), chain(2, ActivityType::MEAL, 1095)]);
        assert_eq!(e.len(), 1, "window is inclusive");
    }

    #[test]
    fn escort_joins_school() {
        let h = hh(&[40, 9]);
        let e = events(&h, &[chain(1, ActivityType::ESCORT, 480), chain(2, ActivityType::SCHOOL, 485)]);
        assert_eq!(e.len(), 1);
        assert_eq!(e[0].activity_type, ActivityType::SCHOOL);
        assert_eq!(e[0].participants[0].role, Role::Head);
        assert_eq!(e[0].participants[1].role, Role::Child);
    }

    #[test]
    fn mismatched_types_stay_apart_and_arity_checked() {
        let h = hh(&[40, 38]);
        let e = events(&h, &[chain(1, ActivityType::WORK, 480), chain(2, ActivityType::MEAL, 480)]);
        assert_eq!(e.len(), 2);
        let err = build_event_table(&h, &[chain(1, ActivityType::WORK, 480)], &ActivityCatalog::default(), &HeadSelection::default(), &EventOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Arity { members: 2, chains: 1, .. }));
    }

    fn item(person: usize, kind: ActivityType, start: u32) -> Item {
        Item {
            person,
            seq: 0,
            kind,
            start,
            accompanying: kind == ActivityType::ESCORT,
        }
    }

    #[test]
    fn exact_repair_beats_greedy_where_greedy_is_suboptimal() {
        // Greedy puts the escort with the meal and strands both work activities.
        let items = [
            item(0, ActivityType::MEAL, 0),
            item(1, ActivityType::WORK, 15),
            item(2, ActivityType::ESCORT, 15),
            item(2, ActivityType::WORK, 30),
        ];
        assert_eq!(greedy_groups(&items, 15).len(), 3);
        assert_eq!(group_items(&items, 15, 16).len(), 2);
    }

    #[test]
    fn roles_heuristic() {
        let h = hh(&[45, 43, 12, 70, 20, 28]);
        let r = infer_roles(&h, 0, &RoleRules::default());
        assert_eq!(r, vec![Role::Head, Role::Spouse, Role::Child, Role::Parent, Role::Child, Role::NonRelative]);
    }

    #[test]
    fn statistics() {
        let h = hh(&[40, 38]);
        let mut all = events(&h, &[chain(1, ActivityType::MEAL, 1080), chain(2, ActivityType::MEAL, 1090)]);
        let mut solo = events(&hh(&[40]), &[chain(1, ActivityType::MEAL, 600)]);
        solo[0].household_id = 10;
        all.append(&mut solo);
        let d = participant_distribution(&all);
        assert_eq!(&d[&ActivityType::MEAL][..2], &[0.5, 0.5]);
        assert!((solo_share(&all) - 0.5).abs() < 1e-12);
        let roles = role_combinations(&all);
        assert_eq!(roles[&ActivityType::MEAL], vec![("Self+Spouse".to_string(), 1)]);
        let w = compute_activity_weights(&all);
        assert!((w[ActivityType::MEAL.index()] - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(w[ActivityType::WORK.index()], 1.0);
    }

    #[test]
    fn weights_counting() {
        let mk = |n: usize, kind| Event {
            household_id: 1,
            event_id: 1,
            activity_type: kind,
            participants: (0..n)
                .map(|i| Participant {
                    person_id: i as u64,
                    role: Role::Head,
                    seq: 1,
                    kind,
                    start: 0,
                })
                .collect(),
            start_window: (0, 0),
            coordinated: n > 1,
        };
        let ev: Vec<Event> = (0..3).map(|_| mk(1, ActivityType::VISIT)).chain([mk(1, ActivityType::WORK)]).collect();
        let mut w = compute_activity_weights(&ev);
        assert_eq!(w[ActivityType::VISIT.index()], 1.0);
        let ev2 = vec![mk(2, ActivityType::MEAL)];
        w = compute_activity_weights(&ev2);
        assert_eq!(w[ActivityType::MEAL.index()], 0.0);
        // 3 solo + 1 joint instance.
        let mut ev3: Vec<Event> = (0..3).map(|_| mk(1, ActivityType::VISIT)).collect();
        let mut joint = mk(2, ActivityType::VISIT);
        joint.participants[1].kind = ActivityType::ESCORT;
        ev3.push(joint);
        w = compute_activity_weights(&ev3);
        assert!((w[ActivityType::VISIT.index()] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let h = hh(&[40, 9]);
        let chains = [chain(1, ActivityType::ESCORT, 480), chain(2, ActivityType::SCHOOL, 485)];
        let ev = events(&h, &chains);
        let cat = ActivityCatalog::default();
        let p = dir.path().join("events.csv");
        write_events(&p, &ev, &cat).unwrap();
        let mut set = crate::io::ChainSet::default();
        for c in chains {
            set.insert(9, c);
        }
        assert_eq!(read_events(&p, &cat, &set).unwrap(), ev);
    }
}
