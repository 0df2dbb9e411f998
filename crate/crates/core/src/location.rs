//! Activity location assignment over traffic analysis zones.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::f64::consts::PI;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::coordination::Event;
use crate::error::{Error, Result};
use crate::io::{create_writer, open_reader, row_of, Columns};
use crate::schedule::{ActivityCatalog, ActivityChain, ActivityType, Household, N_TYPES};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Zone {
    pub taz_id: u32,
    /// Centroid, meters.
    pub x: f64,
    pub y: f64,
    pub land_use: BTreeSet<String>,
    /// Attraction weight per activity type.
    pub attraction: Vec<f64>,
}

impl Zone {
    pub fn new(taz_id: u32, x: f64, y: f64, land_use: &[&str]) -> Self {
        Self {
            taz_id,
            x,
            y,
            land_use: land_use.iter().map(|s| s.to_ascii_lowercase()).collect(),
            attraction: vec![1.0; N_TYPES],
        }
    }
}

/// Zones sorted by taz_id.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ZoneTable {
    pub zones: Vec<Zone>,
}

impl ZoneTable {
    pub fn new(mut zones: Vec<Zone>) -> Result<Self> {
        zones.sort_by_key(|z| z.taz_id);
        for w in zones.windows(2) {
            if w[0].taz_id == w[1].taz_id {
                return Err(Error::Config(format!("duplicate zone {}", w[0].taz_id)));
            }
        }
        for z in &zones {
            if !(z.x.is_finite() && z.y.is_finite()) || z.attraction.iter().any(|d| !(*d >= 0.0)) {
                return Err(Error::Config(format!("zone {} has a non-finite centroid or negative weight", z.taz_id)));
            }
        }
        Ok(Self { zones })
    }

    pub fn ids(&self) -> BTreeSet<u32> {
        self.zones.iter().map(|z| z.taz_id).collect()
    }

    pub fn index_of(&self, taz: u32) -> Option<usize> {
        self.zones.binary_search_by_key(&taz, |z| z.taz_id).ok()
    }

    pub fn get(&self, taz: u32) -> Option<&Zone> {
        self.index_of(taz).map(|i| &self.zones[i])
    }

    pub fn len(&self) -> usize {
        self.zones.len()
    }

    pub fn is_empty(&self) -> bool {
        self.zones.is_empty()
    }
}

fn label_key(label: &str) -> String {
    label.chars().filter(|c| c.is_ascii_alphanumeric()).collect::<String>().to_ascii_lowercase()
}

/// Reads `taz_id, x, y`, boolean land-use columns, and optional `d_<label>` attraction columns.
pub fn read_zones(path: &Path, catalog: &ActivityCatalog) -> Result<ZoneTable> {
    let mut rdr = open_reader(path)?;
    let headers = rdr.headers()?.clone();
    let cols = Columns::new(&headers, &["taz_id", "x", "y"], path)?;
    let by_key: HashMap<String, ActivityType> = ActivityType::all().map(|t| (label_key(catalog.label(t)), t)).collect();
    let mut flag_cols = Vec::new();
    let mut d_cols = Vec::new();
    for h in headers.iter() {
        let h = h.trim().to_ascii_lowercase();
        if ["taz_id", "x", "y"].contains(&h.as_str()) {
            continue;
        }
        if let Some(rest) = h.strip_prefix("d_") {
            let t = by_key.get(&label_key(rest)).ok_or_else(|| Error::Schema {
                path: path.display().to_string(),
                message: format!("attraction column {h} names no activity type"),
            })?;
            d_cols.push((h.clone(), *t));
        } else {
            flag_cols.push(h);
        }
    }
    let mut zones = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let row = row_of(&rec);
        let mut z = Zone {
            taz_id: cols.parse(&rec, "taz_id", row)?,
            x: cols.parse(&rec, "x", row)?,
            y: cols.parse(&rec, "y", row)?,
            land_use: BTreeSet::new(),
            attraction: vec![1.0; N_TYPES],
        };
        for f in &flag_cols {
            if cols.bool(&rec, f, row)? {
                z.land_use.insert(f.clone());
            }
        }
        for (c, t) in &d_cols {
            let v: f64 = cols.parse(&rec, c, row)?;
            if !(v >= 0.0) {
                return Err(Error::invariant(&path.display().to_string(), row, format!("{c} must be >= 0")));
            }
            z.attraction[t.index()] = v;
        }
        zones.push(z);
    }
    ZoneTable::new(zones)
}

pub fn write_zones(path: &Path, zones: &ZoneTable, catalog: &ActivityCatalog) -> Result<()> {
    let flags: BTreeSet<String> = zones.zones.iter().flat_map(|z| z.land_use.iter().cloned()).collect();
    let mut w = create_writer(path)?;
    let mut header = vec!["taz_id".to_string(), "x".into(), "y".into()];
    header.extend(flags.iter().cloned());
    header.extend(ActivityType::all().map(|t| format!("d_{}", label_key(catalog.label(t)))));
    w.write_record(&header)?;
    for z in &zones.zones {
        let mut rec = vec![z.taz_id.to_string(), z.x.to_string(), z.y.to_string()];
        rec.extend(flags.iter().map(|f| (z.land_use.contains(f) as u8).to_string()));
        rec.extend(z.attraction.iter().map(|d| d.to_string()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Land-use flag a zone needs to host `kind`; `None` admits any zone.
pub fn required_land_use(kind: ActivityType) -> Option<&'static str> {
    match kind {
        ActivityType::HOME => Some("residential"),
        ActivityType::WORK => Some("employment"),
        ActivityType::SCHOOL => Some("education"),
        ActivityType::BUY_GOODS | ActivityType::BUY_SERVICES | ActivityType::GENERAL_ERRANDS | ActivityType::MEAL => Some("commercial"),
        ActivityType::RECREATION | ActivityType::EXERCISE => Some("recreation"),
        _ => None,
    }
}

pub fn is_compatible(zone: &Zone, kind: ActivityType) -> bool {
    required_land_use(kind).is_none_or(|f| zone.land_use.contains(f))
}

pub fn is_mandatory(kind: ActivityType) -> bool {
    kind == ActivityType::WORK || kind == ActivityType::SCHOOL
}

/// Empirical distribution sampled by interpolating its sorted support.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistanceSampler {
    pub values: Vec<f64>,
}

impl DistanceSampler {
    pub fn new(mut values: Vec<f64>) -> Result<Self> {
        if values.is_empty() || values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Config("sampler needs finite non-negative values".into()));
        }
        values.sort_by(f64::total_cmp);
        Ok(Self { values })
    }

    /// Exponential distribution with the given mean, discretized at 99 quantiles.
    pub fn exponential(mean: f64) -> Self {
        let values = (1..100).map(|i| -mean * (1.0 - i as f64 / 100.0).ln()).collect();
        Self { values }
    }

    pub fn uniform(lo: f64, hi: f64) -> Self {
        Self {
            values: (0..=100).map(|i| lo + (hi - lo) * i as f64 / 100.0).collect(),
        }
    }

    pub fn sample(&self, rng: &mut impl Rng) -> f64 {
        let n = self.values.len();
        if n == 1 {
            return self.values[0];
        }
        let pos = rng.gen::<f64>() * (n - 1) as f64;
        let i = pos.floor() as usize;
        let f = pos - i as f64;
        self.values[i] + f * (self.values[(i + 1).min(n - 1)] - self.values[i])
    }
}

/// Distance (meters) and bearing-deviation (radians) samplers per activity class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Samplers {
    pub work: DistanceSampler,
    pub school: DistanceSampler,
    pub other: DistanceSampler,
    pub angle: DistanceSampler,
}

impl Default for Samplers {
    fn default() -> Self {
        Self {
            work: DistanceSampler::exponential(10_000.0),
            school: DistanceSampler::exponential(4_000.0),
            other: DistanceSampler::exponential(3_000.0),
            angle: DistanceSampler::uniform(0.0, PI / 2.0),
        }
    }
}

impl Samplers {
    pub fn distance_for(&self, kind: ActivityType) -> &DistanceSampler {
        match kind {
            ActivityType::WORK => &self.work,
            ActivityType::SCHOOL => &self.school,
            _ => &self.other,
        }
    }

    /// Reads `class, value` rows (class: work, school, other, angle); missing classes keep defaults.
    pub fn read(path: &Path) -> Result<Self> {
        let mut rdr = open_reader(path)?;
        let cols = Columns::new(rdr.headers()?, &["class", "value"], path)?;
        let mut by: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for rec in rdr.records() {
            let rec = rec?;
            let row = row_of(&rec);
            let class = cols.str(&rec, "class", row)?.to_ascii_lowercase();
            if !["work", "school", "other", "angle"].contains(&class.as_str()) {
                return Err(Error::invariant(&path.display().to_string(), row, format!("unknown sampler class {class}")));
            }
            by.entry(class).or_default().push(cols.parse(&rec, "value", row)?);
        }
        let mut s = Self::default();
        for (k, v) in by {
            let d = DistanceSampler::new(v)?;
            match k.as_str() {
                "work" => s.work = d,
                "school" => s.school = d,
                "other" => s.other = d,
                _ => s.angle = d,
            }
        }
        Ok(s)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LocationParams {
    pub alpha: f64,
    pub beta: f64,
    /// Minutes; bound on the detour prev → z → next.
    pub t_max: f64,
    pub detour_factor: f64,
    /// km/h
    pub speed: f64,
    pub eta: f64,
    pub max_iter: usize,
    /// L1 gap at which refinement stops.
    pub tol: f64,
    /// Added to costs before the attraction prior is applied.
    pub cost_floor: f64,
}

impl Default for LocationParams {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 1.0 / PI,
            t_max: 90.0,
            detour_factor: 1.3,
            speed: 30.0,
            eta: 0.5,
            max_iter: 50,
            tol: 0.05,
            cost_floor: 0.05,
        }
    }
}

impl LocationParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.beta >= 0.0) {
            return Err(Error::Config("alpha and beta must be >= 0".into()));
        }
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return Err(Error::Config("eta must be in (0, 1]".into()));
        }
        if !(self.speed > 0.0 && self.detour_factor > 0.0 && self.t_max > 0.0) {
            return Err(Error::Config("speed, detour_factor and t_max must be positive".into()));
        }
        Ok(())
    }

    /// Detour-scaled centroid distance, meters.
    pub fn distance(&self, a: &Zone, b: &Zone) -> f64 {
        self.detour_factor * (a.x - b.x).hypot(a.y - b.y)
    }

    /// Travel time, minutes.
    pub fn travel_time(&self, a: &Zone, b: &Zone) -> f64 {
        self.distance(a, b) / (self.speed * 1000.0 / 60.0)
    }
}

/// Angle at `from` between the directions to `z` and to `to`; 0 when either is degenerate.
pub fn bearing_deviation(from: &Zone, z: &Zone, to: &Zone) -> f64 {
    let (ax, ay) = (z.x - from.x, z.y - from.y);
    let (bx, by) = (to.x - from.x, to.y - from.y);
    let na = ax.hypot(ay);
    let nb = bx.hypot(by);
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    ((ax * bx + ay * by) / (na * nb)).clamp(-1.0, 1.0).acos()
}

fn no_zone(kind: ActivityType, catalog: Option<&ActivityCatalog>) -> Error {
    Error::Compatibility {
        activity: catalog.map_or_else(|| kind.default_label().to_string(), |c| c.label(kind).to_string()),
    }
}

/// Zone whose detour distance from `home` is closest to a sampled target; ties to lower id.
pub fn assign_mandatory(home: &Zone, kind: ActivityType, sampler: &DistanceSampler, zones: &ZoneTable, params: &LocationParams, rng: &mut impl Rng) -> Result<u32> {
    let target = sampler.sample(rng);
    zones
        .zones
        .iter()
        .filter(|z| is_compatible(z, kind))
        .map(|z| ((params.distance(home, z) - target).abs(), z.taz_id))
        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
        .map(|(_, id)| id)
        .ok_or_else(|| no_zone(kind, None))
}

/// Result of a non-mandatory choice with the candidate costs retained for refinement.
#[derive(Clone, Debug, PartialEq)]
pub struct Choice {
    pub taz: u32,
    /// T_max admitted no zone; the minimum-travel-time zone was taken instead.
    pub relaxed: bool,
    /// `(zone index, cost)` over the feasible compatible zones.
    pub candidates: Vec<(usize, f64)>,
}

/// Cost of placing an activity at `z` between anchors: `α|d − d̂| + β|θ − θ̂|`, d in km.
pub fn nonmandatory_cost(prev: &Zone, next: &Zone, z: &Zone, target_d: f64, target_theta: f64, params: &LocationParams) -> f64 {
    let d = params.distance(prev, z);
    let theta = bearing_deviation(prev, z, next);
    params.alpha * (d - target_d).abs() / 1000.0 + params.beta * (theta - target_theta).abs()
}

#[allow(clippy::too_many_arguments)]
pub fn assign_nonmandatory(
    prev: &Zone,
    next: &Zone,
    kind: ActivityType,
    params: &LocationParams,
    samplers: &Samplers,
    zones: &ZoneTable,
    rng: &mut impl Rng,
) -> Result<Choice> {
    let target_d = samplers.distance_for(kind).sample(rng);
    let target_theta = samplers.angle.sample(rng);
    let compatible: Vec<usize> = (0..zones.len()).filter(|&i| is_compatible(&zones.zones[i], kind)).collect();
    if compatible.is_empty() {
        return Err(no_zone(kind, None));
    }
    let total_time = |z: &Zone| params.travel_time(prev, z) + params.travel_time(z, next);
    let candidates: Vec<(usize, f64)> = compatible
        .iter()
        .filter(|&&i| total_time(&zones.zones[i]) <= params.t_max)
        .map(|&i| (i, nonmandatory_cost(prev, next, &zones.zones[i], target_d, target_theta, params)))
        .collect();
    if candidates.is_empty() {
        let i = *compatible
            .iter()
            .min_by(|&&a, &&b| total_time(&zones.zones[a]).total_cmp(&total_time(&zones.zones[b])).then(a.cmp(&b)))
            .unwrap();
        return Ok(Choice {
            taz: zones.zones[i].taz_id,
            relaxed: true,
            candidates: vec![(i, 0.0)],
        });
    }
    let best = candidates
        .iter()
        .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
        .unwrap();
    Ok(Choice {
        taz: zones.zones[best.0].taz_id,
        relaxed: false,
        candidates,
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LocatedActivity {
    pub household_id: u64,
    pub person_id: u64,
    pub seq: usize,
    pub kind: ActivityType,
    pub start: u32,
    pub end: u32,
    pub taz: u32,
    pub event_id: Option<u32>,
    pub relaxed: bool,
}

/// A non-mandatory placement that refinement may move: one activity, or every
/// participant activity of a coordinated event.
#[derive(Clone, Debug, PartialEq)]
pub struct Placement {
    pub kind: ActivityType,
    /// Indices into the located list.
    pub members: Vec<usize>,
    pub candidates: Vec<(usize, f64)>,
    pub chosen: usize,
}

/// Locates every activity of one household. `chains` follow member order.
#[allow(clippy::too_many_arguments)]
pub fn assign_household(
    h: &Household,
    chains: &[ActivityChain],
    events: &[Event],
    zones: &ZoneTable,
    samplers: &Samplers,
    params: &LocationParams,
    rng: &mut impl Rng,
) -> Result<(Vec<LocatedActivity>, Vec<Placement>)> {
    let home = zones.get(h.home_taz).ok_or_else(|| Error::UnknownZone {
        path: "population".into(),
        row: h.household_id,
        taz: h.home_taz,
    })?;
    if chains.len() != h.size() {
        return Err(Error::Arity {
            household_id: h.household_id,
            members: h.size(),
            chains: chains.len(),
        });
    }
    let mut located: Vec<LocatedActivity> = Vec::new();
    let mut index: HashMap<(u64, usize), usize> = HashMap::new();
    for c in chains {
        for (seq, a) in c.activities.iter().enumerate() {
            index.insert((c.person_id, seq), located.len());
            located.push(LocatedActivity {
                household_id: h.household_id,
                person_id: c.person_id,
                seq,
                kind: a.kind,
                start: a.start,
                end: a.end,
                taz: u32::MAX,
                event_id: None,
                relaxed: false,
            });
        }
    }
    for e in events {
        for p in &e.participants {
            let li = *index.get(&(p.person_id, p.seq)).ok_or_else(|| {
                Error::Config(format!("event {} of household {} references unknown activity", e.event_id, h.household_id))
            })?;
            located[li].event_id = Some(e.event_id);
        }
    }

    // Anchors: home, then one workplace and one school per person.
    let mut anchors: HashMap<(u64, ActivityType), u32> = HashMap::new();
    for l in located.iter_mut() {
        if l.kind == ActivityType::HOME {
            l.taz = h.home_taz;
        }
    }
    for i in 0..located.len() {
        let kind = located[i].kind;
        if !is_mandatory(kind) {
            continue;
        }
        let key = (located[i].person_id, kind);
        if !anchors.contains_key(&key) {
            let z = assign_mandatory(home, kind, samplers.distance_for(kind), zones, params, rng)?;
            anchors.insert(key, z);
        }
    }
    for l in located.iter_mut() {
        if is_mandatory(l.kind) {
            l.taz = anchors[&(l.person_id, l.kind)];
        }
    }

    // Events share one zone: the first participant's own anchor for mandatory types,
    // otherwise a non-mandatory choice relative to the lead participant's anchors.
    let mut placements = Vec::new();
    for e in events.iter().filter(|e| e.coordinated) {
        let members: Vec<usize> = e.participants.iter().map(|p| index[&(p.person_id, p.seq)]).collect();
        if is_mandatory(e.activity_type) {
            let z = e
                .participants
                .iter()
                .find(|p| p.kind == e.activity_type)
                .map(|p| anchors[&(p.person_id, p.kind)])
                .ok_or_else(|| Error::Config(format!("event {} has no {} participant", e.event_id, e.activity_type.default_label())))?;
            for &m in &members {
                located[m].taz = z;
            }
        } else {
            let lead = members[0];
            let choice = choose_between_anchors(&located, lead, e.activity_type, home, zones, samplers, params, rng)?;
            for &m in &members {
                located[m].taz = choice.taz;
                located[m].relaxed = choice.relaxed;
            }
            placements.push(Placement {
                kind: e.activity_type,
                chosen: zones.index_of(choice.taz).unwrap(),
                members,
                candidates: choice.candidates,
            });
        }
    }
    for i in 0..located.len() {
        if located[i].taz != u32::MAX {
            continue;
        }
        let kind = located[i].kind;
        let choice = choose_between_anchors(&located, i, kind, home, zones, samplers, params, rng)?;
        located[i].taz = choice.taz;
        located[i].relaxed = choice.relaxed;
        placements.push(Placement {
            kind,
            chosen: zones.index_of(choice.taz).unwrap(),
            members: vec![i],
            candidates: choice.candidates,
        });
    }
    Ok((located, placements))
}

/// Previous and next anchor zones of activity `i` in its person's chain, home by default.
#[allow(clippy::too_many_arguments)]
fn choose_between_anchors(
    located: &[LocatedActivity],
    i: usize,
    kind: ActivityType,
    home: &Zone,
    zones: &ZoneTable,
    samplers: &Samplers,
    params: &LocationParams,
    rng: &mut impl Rng,
) -> Result<Choice> {
    let pid = located[i].person_id;
    let is_anchor = |l: &LocatedActivity| l.person_id == pid && (l.kind == ActivityType::HOME || is_mandatory(l.kind)) && l.taz != u32::MAX;
    let prev = located[..i].iter().rev().find(|l| is_anchor(l)).map_or(home, |l| zones.get(l.taz).unwrap());
    let next = located[i + 1..].iter().find(|l| is_anchor(l)).map_or(home, |l| zones.get(l.taz).unwrap());
    assign_nonmandatory(prev, next, kind, params, samplers, zones, rng)
}

/// Outcome of spatial refinement for one activity type.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Refinement {
    pub kind: ActivityType,
    pub weights: Vec<f64>,
    pub gap_history: Vec<f64>,
    pub final_gap: f64,
    pub iterations: usize,
}

fn normalized(v: &[f64]) -> Vec<f64> {
    let s: f64 = v.iter().sum();
    if s > 0.0 {
        v.iter().map(|x| x / s).collect()
    } else {
        vec![1.0 / v.len() as f64; v.len()]
    }
}

pub fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

fn shares(placements: &[&mut Placement], n_zones: usize) -> Vec<f64> {
    let mut f = vec![0.0; n_zones];
    for p in placements {
        f[p.chosen] += p.members.len() as f64;
    }
    normalized(&f)
}

/// One step of the attraction update: `D + η(F_target − F_current)`, clamped and renormalized.
pub fn update_weights(d: &[f64], target: &[f64], current: &[f64], eta: f64) -> Vec<f64> {
    let raw: Vec<f64> = d.iter().zip(target).zip(current).map(|((d, t), c)| (d + eta * (t - c)).max(0.0)).collect();
    normalized(&raw)
}

const PRIOR_EPS: f64 = 1e-6;

/// Iteratively adjusts per-zone attraction `d` so the shares of `placements` approach
/// `target`, re-drawing each placement with probability proportional to `(D_z + ε) / cost_z`.
/// The best iterate is kept.
pub fn refine_spatial(
    kind: ActivityType,
    d: &[f64],
    target: &[f64],
    placements: &mut [&mut Placement],
    params: &LocationParams,
    rng: &mut impl Rng,
) -> Refinement {
    let n = d.len();
    let mut weights = normalized(d);
    let mut current = shares(placements, n);
    let mut gap = l1(&current, target);
    let mut history = vec![gap];
    let mut best = (gap, weights.clone(), placements.iter().map(|p| p.chosen).collect::<Vec<_>>());
    let mut iterations = 0;
    // Race keys are drawn once per placement so successive re-draws differ only through D.
    let keys: Vec<Vec<f64>> = placements
        .iter()
        .map(|p| p.candidates.iter().map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect())
        .collect();
    while gap >= params.tol && iterations < params.max_iter && !placements.is_empty() {
        iterations += 1;
        weights = update_weights(&weights, target, &current, params.eta / (iterations as f64).sqrt());
        for (p, k) in placements.iter_mut().zip(&keys) {
            p.chosen = race(&p.candidates, k, &weights, params.cost_floor);
        }
        current = shares(placements, n);
        gap = l1(&current, target);
        history.push(gap);
        if gap < best.0 {
            best = (gap, weights.clone(), placements.iter().map(|p| p.chosen).collect());
        }
    }
    for (p, c) in placements.iter_mut().zip(&best.2) {
        p.chosen = *c;
    }
    Refinement {
        kind,
        weights: best.1,
        gap_history: history,
        final_gap: best.0,
        iterations,
    }
}

/// Exponential race over unit-rate keys `e`: zone z wins with probability proportional to
/// `(D_z + ε)/(cost_z + floor)`.
fn race(candidates: &[(usize, f64)], e: &[f64], d: &[f64], floor: f64) -> usize {
    let mut best = (f64::INFINITY, usize::MAX);
    for (&(z, cost), e) in candidates.iter().zip(e) {
        let key = (cost + floor) * e / (d[z] + PRIOR_EPS);
        if key < best.0 || (key == best.0 && z < best.1) {
            best = (key, z);
        }
    }
    best.1
}

/// Target shares per type: the normalized attraction weights of compatible zones.
pub fn default_targets(zones: &ZoneTable) -> Vec<Vec<f64>> {
    ActivityType::all()
        .map(|t| {
            let w: Vec<f64> = zones.zones.iter().map(|z| if is_compatible(z, t) { z.attraction[t.index()] } else { 0.0 }).collect();
            normalized(&w)
        })
        .collect()
}

/// Refines every type with placements and writes the chosen zones back into `located`.
pub fn refine_all(
    located: &mut [LocatedActivity],
    placements: &mut [Placement],
    zones: &ZoneTable,
    targets: &[Vec<f64>],
    params: &LocationParams,
    seed: u64,
) -> Vec<Refinement> {
    let mut out = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for kind in ActivityType::all() {
        let mut group: Vec<&mut Placement> = placements.iter_mut().filter(|p| p.kind == kind && p.candidates.len() > 1).collect();
        if group.is_empty() {
            continue;
        }
        let d: Vec<f64> = zones.zones.iter().map(|z| z.attraction[kind.index()]).collect();
        out.push(refine_spatial(kind, &d, &targets[kind.index()], &mut group, params, &mut rng));
    }
    for p in placements.iter() {
        for &m in &p.members {
            located[m].taz = zones.zones[p.chosen].taz_id;
        }
    }
    out
}

/// Reads `taz_id, activity_type, share` rows into per-type target vectors; absent
/// types use the attraction weights.
pub fn read_targets(path: &Path, zones: &ZoneTable, catalog: &ActivityCatalog) -> Result<Vec<Vec<f64>>> {
    let mut rdr = open_reader(path)?;
    let cols = Columns::new(rdr.headers()?, &["taz_id", "activity_type", "share"], path)?;
    let ps = path.display().to_string();
    let mut given: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let row = row_of(&rec);
        let taz: u32 = cols.parse(&rec, "taz_id", row)?;
        let zi = zones.index_of(taz).ok_or_else(|| Error::UnknownZone { path: ps.clone(), row, taz })?;
        let label = cols.str(&rec, "activity_type", row)?;
        let t = catalog.parse(label).ok_or_else(|| Error::invariant(&ps, row, format!("unknown activity type {label}")))?;
        let v: f64 = cols.parse(&rec, "share", row)?;
        if !(v >= 0.0) {
            return Err(Error::invariant(&ps, row, "share must be >= 0"));
        }
        given.entry(t.index()).or_insert_with(|| vec![0.0; zones.len()])[zi] = v;
    }
    let mut out = default_targets(zones);
    for (t, v) in given {
        out[t] = normalized(&v);
    }
    Ok(out)
}

pub const PLANS_HEADER: [&str; 9] = ["household_id", "person_id", "seq", "activity_type", "start", "end", "taz_id", "event_id", "relaxed"];

pub fn write_plans(path: &Path, plans: &[LocatedActivity], catalog: &ActivityCatalog) -> Result<()> {
    let mut w = create_writer(path)?;
    w.write_record(PLANS_HEADER)?;
    for l in plans {
        w.write_record([
            l.household_id.to_string(),
            l.person_id.to_string(),
            l.seq.to_string(),
            catalog.label(l.kind).to_string(),
            l.start.to_string(),
            l.end.to_string(),
            l.taz.to_string(),
            l.event_id.map_or(String::new(), |e| e.to_string()),
            (l.relaxed as u8).to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_plans(path: &Path, catalog: &ActivityCatalog) -> Result<Vec<LocatedActivity>> {
    let mut rdr = open_reader(path)?;
    let cols = Columns::new(rdr.headers()?, &PLANS_HEADER[..7], path)?;
    let ps = path.display().to_string();
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let row = row_of(&rec);
        let label = cols.str(&rec, "activity_type", row)?;
        let kind = catalog.parse(label).ok_or_else(|| Error::invariant(&ps, row, format!("unknown activity type {label}")))?;
        let event_id = match cols.has("event_id") {
            true => match rec.get(cols.position("event_id").unwrap()).unwrap_or("") {
                "" => None,
                v => Some(v.parse().map_err(|_| Error::invariant(&ps, row, "bad event_id"))?),
            },
            false => None,
        };
        out.push(LocatedActivity {
            household_id: cols.parse(&rec, "household_id", row)?,
            person_id: cols.parse(&rec, "person_id", row)?,
            seq: cols.parse(&rec, "seq", row)?,
            kind,
            start: cols.parse(&rec, "start", row)?,
            end: cols.parse(&rec, "end", row)?,
            taz: cols.parse(&rec, "taz_id", row)?,
            event_id,
            relaxed: cols.has("relaxed") && cols.bool(&rec, "relaxed", row)?,
        });
    }
    Ok(out)
}
