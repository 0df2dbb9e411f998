//! Validation report comparing a generated artifact directory against a reference one.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::coordination::{participant_distribution, read_events, role_combinations, Event};
use crate::error::{Error, Result};
use crate::io::{create_writer, read_activities, write_json, ChainSet};
use crate::mesosim::assign::{read_corridor, read_od, read_vmt, CorridorRow};
use crate::metrics::{
    activity_count_histogram, align_od, cosine_similarity, duration_quartiles, jsd_raw, mape, slot_type_counts, start_time_counts, type_counts,
};
use crate::schedule::{ActivityCatalog, ActivityChain, ActivityType, P_MAX, SLOT_MINUTES};

pub const ACTIVITIES_FILE: &str = "activities.csv";
pub const EVENTS_FILE: &str = "events.csv";
pub const OD_FILE: &str = "od.csv";
pub const VMT_FILE: &str = "vmt.csv";
pub const CORRIDOR_FILE: &str = "corridor.csv";
pub const REPORT_FILE: &str = "report.json";

pub const ALL_SLICES: [&str; 11] = ["fig4a", "fig4b", "fig4c", "fig4d", "fig4e", "fig5", "fig6", "fig7a", "fig7b", "fig8c", "fig8d"];
const MAX_ACTIVITIES: usize = 30;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ValidationConfig {
    pub slices: Vec<String>,
    /// Optional published values per slice, copied into the report.
    pub reference_values: BTreeMap<String, f64>,
    pub mape_eps: f64,
}

impl Default for ValidationConfig {
    fn default() -> Self {
        Self {
            slices: ALL_SLICES.iter().map(|s| s.to_string()).collect(),
            reference_values: BTreeMap::new(),
            mape_eps: 1e-9,
        }
    }
}

impl ValidationConfig {
    pub fn validate(&self) -> Result<()> {
        for s in &self.slices {
            if !ALL_SLICES.contains(&s.as_str()) {
                return Err(Error::Config(format!("unknown metric slice {s}")));
            }
        }
        Ok(())
    }
}

/// Whatever a directory provides; absent files stay `None`.
#[derive(Clone, Debug, Default)]
pub struct Artifacts {
    pub chains: Option<Vec<ActivityChain>>,
    pub events: Option<Vec<Event>>,
    pub od: Option<BTreeMap<(u32, u32), u64>>,
    pub vmt: Option<Vec<f64>>,
    pub corridor: Option<Vec<CorridorRow>>,
}

impl Artifacts {
    pub fn load(dir: &Path, catalog: &ActivityCatalog) -> Result<Self> {
        let f = |n: &str| Some(dir.join(n)).filter(|p| p.exists());
        let set: Option<ChainSet> = f(ACTIVITIES_FILE).map(|p| read_activities(&p, catalog)).transpose()?;
        let events = match (&set, f(EVENTS_FILE)) {
            (Some(s), Some(p)) => Some(read_events(&p, catalog, s)?),
            _ => None,
        };
        Ok(Self {
            chains: set.map(|s| s.chains.into_values().collect()),
            events,
            od: f(OD_FILE).map(|p| read_od(&p)).transpose()?,
            vmt: f(VMT_FILE).map(|p| read_vmt(&p)).transpose()?,
            corridor: f(CORRIDOR_FILE).map(|p| read_corridor(&p)).transpose()?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum Outcome {
    Ok { value: f64 },
    Absent { reason: String },
    Undefined { reason: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricEntry {
    pub slice: String,
    pub metric: String,
    pub definition: String,
    pub outcome: Outcome,
    pub reference_value: Option<f64>,
}

impl MetricEntry {
    pub fn value(&self) -> Option<f64> {
        match self.outcome {
            Outcome::Ok { value } => Some(value),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new(header: &[&str]) -> Self {
        Self {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    fn push(&mut self, row: Vec<String>) {
        self.rows.push(row);
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub entries: Vec<MetricEntry>,
    #[serde(skip)]
    pub tables: BTreeMap<String, Table>,
}

impl ValidationReport {
    pub fn entry(&self, slice: &str) -> Option<&MetricEntry> {
        self.entries.iter().find(|e| e.slice == slice)
    }

    /// Writes `report.json` and one `<slice>.csv` per computed table.
    pub fn write(&self, dir: &Path) -> Result<()> {
        write_json(&dir.join(REPORT_FILE), self)?;
        for (name, t) in &self.tables {
            let path = dir.join(format!("{name}.csv"));
            let mut w = create_writer(&path)?;
            w.write_record(&t.header)?;
            for r in &t.rows {
                w.write_record(r)?;
            }
            w.flush().map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

fn norm(v: &[f64]) -> Option<Vec<f64>> {
    let s: f64 = v.iter().sum();
    (s > 0.0).then(|| v.iter().map(|x| x / s).collect())
}

fn f(x: f64) -> String {
    format!("{x:.9}")
}

fn jsd_counts(a: &[f64], b: &[f64]) -> std::result::Result<f64, String> {
    match (norm(a), norm(b)) {
        (Some(p), Some(q)) => Ok(jsd_raw(&p, &q)),
        _ => Err("empty distribution".into()),
    }
}

struct Ctx<'a> {
    gen: &'a Artifacts,
    reference: &'a Artifacts,
    catalog: &'a ActivityCatalog,
    eps: f64,
}

type SliceResult = std::result::Result<(f64, Table), String>;

fn need<'x, T>(g: &'x Option<T>, r: &'x Option<T>, what: &str) -> std::result::Result<(&'x T, &'x T), Outcome> {
    match (g, r) {
        (Some(a), Some(b)) => Ok((a, b)),
        (None, _) => Err(Outcome::Absent { reason: format!("generated {what} missing") }),
        (_, None) => Err(Outcome::Absent { reason: format!("reference {what} missing") }),
    }
}

impl Ctx<'_> {
    fn label(&self, t: ActivityType) -> String {
        self.catalog.label(t).to_string()
    }

    fn slot_jsd(&self, g: &[ActivityChain], r: &[ActivityChain]) -> SliceResult {
        let (a, b) = (slot_type_counts(g), slot_type_counts(r));
        let mut t = Table::new(&["slot", "start_min", "jsd"]);
        let mut vals = Vec::new();
        for (s, (x, y)) in a.iter().zip(&b).enumerate() {
            let v = jsd_counts(x, y)?;
            vals.push(v);
            t.push(vec![s.to_string(), (s as u32 * SLOT_MINUTES).to_string(), f(v)]);
        }
        Ok((vals.iter().sum::<f64>() / vals.len() as f64, t))
    }

    fn paired_jsd(&self, a: &[f64], b: &[f64], header: &[&str], key: impl Fn(usize) -> Vec<String>) -> SliceResult {
        let v = jsd_counts(a, b)?;
        let mut t = Table::new(header);
        let (pa, pb) = (norm(a).unwrap(), norm(b).unwrap());
        for i in 0..a.len() {
            let mut row = key(i);
            row.push(f(pa[i]));
            row.push(f(pb[i]));
            t.push(row);
        }
        Ok((v, t))
    }

    fn durations(&self, g: &[ActivityChain], r: &[ActivityChain]) -> SliceResult {
        let (qa, qb) = (duration_quartiles(g), duration_quartiles(r));
        let mut t = Table::new(&["activity_type", "source", "n", "min", "q1", "median", "q3", "max"]);
        for (src, q) in [("generated", &qa), ("reference", &qb)] {
            for (k, x) in q {
                t.push(vec![self.label(*k), src.into(), x.n.to_string(), f(x.min), f(x.q1), f(x.median), f(x.q3), f(x.max)]);
            }
        }
        let common: Vec<ActivityType> = qa.keys().filter(|k| qb.contains_key(k)).copied().collect();
        let pred: Vec<f64> = common.iter().map(|k| qa[k].median).collect();
        let obs: Vec<f64> = common.iter().map(|k| qb[k].median).collect();
        let m = mape(&pred, &obs, self.eps).map_err(|e| e.to_string())?;
        Ok((m.value, t))
    }

    fn participants(&self, g: &[Event], r: &[Event]) -> SliceResult {
        let (a, b) = (participant_distribution(g), participant_distribution(r));
        let mut t = Table::new(&["activity_type", "participants", "generated", "reference"]);
        let mut vals = Vec::new();
        let kinds: BTreeSet<ActivityType> = a.keys().chain(b.keys()).copied().collect();
        let zero = vec![0.0; P_MAX];
        for k in kinds {
            let (x, y) = (a.get(&k).unwrap_or(&zero), b.get(&k).unwrap_or(&zero));
            if let Ok(v) = jsd_counts(x, y) {
                vals.push(v);
            }
            for n in 0..P_MAX {
                t.push(vec![self.label(k), (n + 1).to_string(), f(x[n]), f(y[n])]);
            }
        }
        if vals.is_empty() {
            return Err("no activity type present on both sides".into());
        }
        Ok((vals.iter().sum::<f64>() / vals.len() as f64, t))
    }

    fn roles(&self, g: &[Event], r: &[Event]) -> SliceResult {
        let (a, b) = (role_combinations(g), role_combinations(r));
        let mut keys: BTreeMap<(ActivityType, String), (f64, f64)> = BTreeMap::new();
        for (k, rows) in &a {
            for (combo, n) in rows {
                keys.entry((*k, combo.clone())).or_default().0 += *n as f64;
            }
        }
        for (k, rows) in &b {
            for (combo, n) in rows {
                keys.entry((*k, combo.clone())).or_default().1 += *n as f64;
            }
        }
        let mut t = Table::new(&["activity_type", "roles", "generated", "reference"]);
        let (mut xa, mut xb) = (Vec::new(), Vec::new());
        for ((k, combo), (x, y)) in &keys {
            t.push(vec![self.label(*k), combo.clone(), x.to_string(), y.to_string()]);
            xa.push(*x);
            xb.push(*y);
        }
        Ok((jsd_counts(&xa, &xb)?, t))
    }

    fn corridor(&self, g: &[CorridorRow], r: &[CorridorRow], speed: bool) -> SliceResult {
        let val = |c: &CorridorRow| if speed { c.mean_speed } else { c.volume as f64 };
        let rb: BTreeMap<(u32, usize), f64> = r.iter().map(|c| ((c.link_id, c.interval), val(c))).collect();
        let mut t = Table::new(&["link_id", "interval", "generated", "reference"]);
        let (mut p, mut o) = (Vec::new(), Vec::new());
        for c in g {
            if let Some(&y) = rb.get(&(c.link_id, c.interval)) {
                t.push(vec![c.link_id.to_string(), c.interval.to_string(), f(val(c)), f(y)]);
                p.push(val(c));
                o.push(y);
            }
        }
        Ok((mape(&p, &o, self.eps).map_err(|e| e.to_string())?.value, t))
    }

    fn run(&self, slice: &str) -> (String, String, std::result::Result<SliceResult, Outcome>) {
        let (g, r) = (self.gen, self.reference);
        let labels: Vec<String> = ActivityType::all().map(|t| self.label(t)).collect();
        let one = |i: usize| vec![i.to_string()];
        match slice {
            "fig4a" => (
                "jsd".into(),
                "mean over 15-min slots of the JSD between activity-type shares".into(),
                need(&g.chains, &r.chains, "activities").map(|(a, b)| self.slot_jsd(a, b)),
            ),
            "fig4b" => (
                "jsd".into(),
                "JSD of activity-type instance shares".into(),
                need(&g.chains, &r.chains, "activities").map(|(a, b)| self.paired_jsd(&type_counts(a), &type_counts(b), &["activity_type", "generated", "reference"], |i| vec![labels[i].clone()])),
            ),
            "fig4c" => (
                "jsd".into(),
                "JSD of activity start times in 15-min bins".into(),
                need(&g.chains, &r.chains, "activities")
                    .map(|(a, b)| self.paired_jsd(&start_time_counts(a), &start_time_counts(b), &["bin", "generated", "reference"], one)),
            ),
            "fig4d" => (
                "mape".into(),
                "MAPE of per-type median durations; quartiles in the table".into(),
                need(&g.chains, &r.chains, "activities").map(|(a, b)| self.durations(a, b)),
            ),
            "fig4e" => (
                "jsd".into(),
                "JSD of activities-per-person counts".into(),
                need(&g.chains, &r.chains, "activities").map(|(a, b)| {
                    self.paired_jsd(
                        &activity_count_histogram(a, MAX_ACTIVITIES),
                        &activity_count_histogram(b, MAX_ACTIVITIES),
                        &["activities", "generated", "reference"],
                        |i| vec![(i + 1).to_string()],
                    )
                }),
            ),
            "fig5" => (
                "jsd".into(),
                "mean over activity types of the JSD between participant-count distributions".into(),
                need(&g.events, &r.events, "events").map(|(a, b)| self.participants(a, b)),
            ),
            "fig6" => (
                "jsd".into(),
                "JSD of (activity type, role combination) counts over coordinated events".into(),
                need(&g.events, &r.events, "events").map(|(a, b)| self.roles(a, b)),
            ),
            "fig7a" => (
                "cosine".into(),
                "cosine similarity of zone-to-zone trip matrices".into(),
                need(&g.od, &r.od, "OD matrix").map(|(a, b)| {
                    let (x, y) = align_od(a, b);
                    let v = cosine_similarity(&x, &y).map_err(|e| e.to_string())?;
                    let mut t = Table::new(&["origin_taz", "dest_taz", "generated", "reference"]);
                    let keys: BTreeSet<&(u32, u32)> = a.keys().chain(b.keys()).collect();
                    for k in keys {
                        t.push(vec![k.0.to_string(), k.1.to_string(), a.get(k).copied().unwrap_or(0).to_string(), b.get(k).copied().unwrap_or(0).to_string()]);
                    }
                    Ok((v, t))
                }),
            ),
            "fig7b" => (
                "mape".into(),
                "MAPE of vehicle-km per 15-min interval".into(),
                need(&g.vmt, &r.vmt, "VMT").map(|(a, b)| {
                    let n = a.len().min(b.len());
                    let m = mape(&a[..n], &b[..n], self.eps).map_err(|e| e.to_string())?;
                    let mut t = Table::new(&["interval", "generated", "reference"]);
                    for i in 0..n {
                        t.push(vec![i.to_string(), f(a[i]), f(b[i])]);
                    }
                    Ok((m.value, t))
                }),
            ),
            "fig8c" => (
                "mape".into(),
                "MAPE of corridor link volumes per interval".into(),
                need(&g.corridor, &r.corridor, "corridor").map(|(a, b)| self.corridor(a, b, false)),
            ),
            "fig8d" => (
                "mape".into(),
                "MAPE of corridor link mean speeds per interval".into(),
                need(&g.corridor, &r.corridor, "corridor").map(|(a, b)| self.corridor(a, b, true)),
            ),
            other => ("".into(), "".into(), Err(Outcome::Absent { reason: format!("unknown slice {other}") })),
        }
    }
}

pub fn validate(generated: &Artifacts, reference: &Artifacts, catalog: &ActivityCatalog, cfg: &ValidationConfig) -> Result<ValidationReport> {
    cfg.validate()?;
    let ctx = Ctx {
        gen: generated,
        reference,
        catalog,
        eps: cfg.mape_eps,
    };
    let mut report = ValidationReport::default();
    for slice in &cfg.slices {
        let (metric, definition, res) = ctx.run(slice);
        let outcome = match res {
            Err(o) => o,
            Ok(Err(reason)) => Outcome::Undefined { reason },
            Ok(Ok((value, table))) => {
                report.tables.insert(slice.clone(), table);
                Outcome::Ok { value }
            }
        };
        if let Outcome::Absent { reason } = &outcome {
            log::warn!("slice {slice} absent: {reason}");
        }
        report.entries.push(MetricEntry {
            slice: slice.clone(),
            metric,
            definition,
            outcome,
            reference_value: cfg.reference_values.get(slice).copied(),
        });
    }
    Ok(report)
}

pub fn validate_dirs(generated: &Path, reference: &Path, catalog: &ActivityCatalog, cfg: &ValidationConfig) -> Result<ValidationReport> {
    validate(&Artifacts::load(generated, catalog)?, &Artifacts::load(reference, catalog)?, catalog, cfg)
}
