//! CSV readers and writers for populations, activity corpora and slot grids, plus the
//! metadata sidecars attached to every artifact.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::schedule::{
    Activity, ActivityCatalog, ActivityChain, ActivityType, Gender, Household, Person, SlotGrid,
    DAY_MINUTES, SLOTS,
};

pub const POPULATION_HEADER: [&str; 11] = [
    "household_id",
    "person_id",
    "home_taz",
    "income",
    "vehicles",
    "age",
    "employed",
    "student",
    "education",
    "has_license",
    "gender",
];

pub const ACTIVITY_HEADER: [&str; 5] = ["household_id", "person_id", "activity_type", "start_min", "end_min"];

pub(crate) fn open_reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file))
}

pub(crate) fn create_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

/// Maps required column names to positions; extra columns are allowed.
pub(crate) struct Columns {
    idx: HashMap<String, usize>,
    path: String,
}

impl Columns {
    pub(crate) fn new(headers: &csv::StringRecord, required: &[&str], path: &Path) -> Result<Self> {
        let idx: HashMap<String, usize> = headers
            .iter()
            .enumerate()
            .map(|(i, h)| (h.trim().to_ascii_lowercase(), i))
            .collect();
        let missing: Vec<&str> = required
            .iter()
            .copied()
            .filter(|c| !idx.contains_key(*c))
            .collect();
        if !missing.is_empty() {
            return Err(Error::Schema {
                path: path.display().to_string(),
                message: format!("missing columns {missing:?}"),
            });
        }
        Ok(Self {
            idx,
            path: path.display().to_string(),
        })
    }

    pub(crate) fn has(&self, name: &str) -> bool {
        self.idx.contains_key(name)
    }

    pub(crate) fn position(&self, name: &str) -> Option<usize> {
        self.idx.get(name).copied()
    }

    pub(crate) fn str<'r>(&self, rec: &'r csv::StringRecord, name: &str, row: u64) -> Result<&'r str> {
        let v = self
            .idx
            .get(name)
            .and_then(|&i| rec.get(i))
            .unwrap_or("");
        if v.is_empty() {
            return Err(Error::invariant(&self.path, row, format!("missing value for `{name}`")));
        }
        Ok(v)
    }

    pub(crate) fn parse<T: std::str::FromStr>(&self, rec: &csv::StringRecord, name: &str, row: u64) -> Result<T> {
        let v = self.str(rec, name, row)?;
        v.parse()
            .map_err(|_| Error::invariant(&self.path, row, format!("cannot parse `{name}` = {v:?}")))
    }

    pub(crate) fn bool(&self, rec: &csv::StringRecord, name: &str, row: u64) -> Result<bool> {
        match self.str(rec, name, row)?.to_ascii_lowercase().as_str() {
            "1" | "true" | "t" | "yes" | "y" => Ok(true),
            "0" | "false" | "f" | "no" | "n" => Ok(false),
            other => Err(Error::invariant(&self.path, row, format!("`{name}` is not boolean: {other:?}"))),
        }
    }
}

pub(crate) fn row_of(rec: &csv::StringRecord) -> u64 {
    rec.position().map_or(0, |p| p.line())
}

/// A household population with optional per-household weights (seed samples).
#[derive(Clone, Debug, Default)]
pub struct PopulationFile {
    pub households: Vec<Household>,
    pub weights: Vec<f64>,
}

/// Reads the flat one-row-per-person population CSV. Household fields must agree across
/// the rows of a household. When `zones` is given, every `home_taz` must be in it.
pub fn read_population(path: &Path, zones: Option<&BTreeSet<u32>>) -> Result<PopulationFile> {
    let mut rdr = open_reader(path)?;
    let cols = Columns::new(rdr.headers()?, &POPULATION_HEADER, path)?;
    let p = path.display().to_string();
    let mut order: Vec<u64> = Vec::new();
    let mut by_id: HashMap<u64, (Household, f64)> = HashMap::new();
    let mut seen_persons = BTreeSet::new();
    for rec in rdr.records() {
        let rec = rec?;
        let row = row_of(&rec);
        let household_id: u64 = cols.parse(&rec, "household_id", row)?;
        let person_id: u64 = cols.parse(&rec, "person_id", row)?;
        let home_taz: u32 = cols.parse(&rec, "home_taz", row)?;
        let income: u8 = cols.parse(&rec, "income", row)?;
        let vehicles: i64 = cols.parse(&rec, "vehicles", row)?;
        let age: i64 = cols.parse(&rec, "age", row)?;
        if age < 0 {
            return Err(Error::invariant(&p, row, format!("age {age} < 0")));
        }
        if vehicles < 0 {
            return Err(Error::invariant(&p, row, format!("vehicles {vehicles} < 0")));
        }
        let gender_s = cols.str(&rec, "gender", row)?;
        let gender = Gender::parse(gender_s)
            .ok_or_else(|| Error::invariant(&p, row, format!("unknown gender {gender_s:?}")))?;
        let weight = if cols.has("weight") {
            let w: f64 = cols.parse(&rec, "weight", row)?;
            if !(w > 0.0 && w.is_finite()) {
                return Err(Error::invariant(&p, row, format!("weight {w} must be positive")));
            }
            w
        } else {
            1.0
        };
        if let Some(z) = zones {
            if !z.contains(&home_taz) {
                return Err(Error::UnknownZone { path: p, row, taz: home_taz });
            }
        }
        if !seen_persons.insert(person_id) {
            return Err(Error::invariant(&p, row, format!("duplicate person_id {person_id}")));
        }
        let person = Person {
            person_id,
            age: age as u32,
            employed: cols.bool(&rec, "employed", row)?,
            student: cols.bool(&rec, "student", row)?,
            education: cols.parse(&rec, "education", row)?,
            has_license: cols.bool(&rec, "has_license", row)?,
            gender,
        };
        match by_id.get_mut(&household_id) {
            Some((h, w)) => {
                if h.home_taz != home_taz || h.income != income || h.vehicles != vehicles as u32 || *w != weight {
                    return Err(Error::invariant(
                        &p,
                        row,
                        format!("household {household_id} fields disagree with earlier rows"),
                    ));
                }
                h.members.push(person);
            }
            None => {
                order.push(household_id);
                by_id.insert(
                    household_id,
                    (
                        Household {
                            household_id,
                            members: vec![person],
                            income,
                            vehicles: vehicles as u32,
                            home_taz,
                        },
                        weight,
                    ),
                );
            }
        }
    }
    let mut out = PopulationFile::default();
    for id in order {
        let (h, w) = by_id.remove(&id).unwrap();
        out.households.push(h);
        out.weights.push(w);
    }
    Ok(out)
}

pub fn write_population(path: &Path, households: &[Household], weights: Option<&[f64]>) -> Result<()> {
    let mut w = create_writer(path)?;
    let mut header: Vec<&str> = POPULATION_HEADER.to_vec();
    if weights.is_some() {
        header.push("weight");
    }
    w.write_record(&header)?;
    for (i, h) in households.iter().enumerate() {
        for p in &h.members {
            let mut rec = vec![
                h.household_id.to_string(),
                p.person_id.to_string(),
                h.home_taz.to_string(),
                h.income.to_string(),
                h.vehicles.to_string(),
                p.age.to_string(),
                u8::from(p.employed).to_string(),
                u8::from(p.student).to_string(),
                p.education.to_string(),
                u8::from(p.has_license).to_string(),
                p.gender.as_str().to_string(),
            ];
            if let Some(ws) = weights {
                rec.push(ws[i].to_string());
            }
            w.write_record(&rec)?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Chains keyed by person_id, in file order, with the owning household recorded.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ChainSet {
    pub chains: BTreeMap<u64, ActivityChain>,
    pub household_of: BTreeMap<u64, u64>,
}

impl ChainSet {
    pub fn insert(&mut self, household_id: u64, chain: ActivityChain) {
        self.household_of.insert(chain.person_id, household_id);
        self.chains.insert(chain.person_id, chain);
    }

    /// Chains for a household's members in member order.
    pub fn for_household(&self, h: &Household) -> Option<Vec<ActivityChain>> {
        h.members
            .iter()
            .map(|p| self.chains.get(&p.person_id).cloned())
            .collect()
    }
}

/// Reads the activity corpus CSV; every chain must cover the full day.
pub fn read_activities(path: &Path, catalog: &ActivityCatalog) -> Result<ChainSet> {
    let mut rdr = open_reader(path)?;
    let cols = Columns::new(rdr.headers()?, &ACTIVITY_HEADER, path)?;
    let p = path.display().to_string();
    let mut set = ChainSet::default();
    let mut first_row: HashMap<u64, u64> = HashMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let row = row_of(&rec);
        let household_id: u64 = cols.parse(&rec, "household_id", row)?;
        let person_id: u64 = cols.parse(&rec, "person_id", row)?;
        let label = cols.str(&rec, "activity_type", row)?;
        let kind = catalog
            .parse(label)
            .filter(|k| !k.is_pad())
            .ok_or_else(|| Error::invariant(&p, row, format!("unknown activity type {label:?}")))?;
        let start: u32 = cols.parse(&rec, "start_min", row)?;
        let end: u32 = cols.parse(&rec, "end_min", row)?;
        if start >= end || end > DAY_MINUTES {
            return Err(Error::invariant(&p, row, format!("activity spans [{start}, {end})")));
        }
        first_row.entry(person_id).or_insert(row);
        match set.household_of.get(&person_id) {
            Some(&hid) if hid != household_id => {
                return Err(Error::invariant(&p, row, format!("person {person_id} in two households")));
            }
            _ => {}
        }
        set.household_of.insert(person_id, household_id);
        set.chains
            .entry(person_id)
            .or_insert_with(|| ActivityChain::new(person_id, Vec::new()))
            .activities
            .push(Activity::new(kind, start, end));
    }
    for chain in set.chains.values_mut() {
        chain.activities.sort_by_key(|a| a.start);
        chain.validate().map_err(|e| {
            Error::invariant(&p, first_row[&chain.person_id], e.to_string())
        })?;
    }
    Ok(set)
}

pub fn write_activities(path: &Path, set: &ChainSet, catalog: &ActivityCatalog) -> Result<()> {
    let mut w = create_writer(path)?;
    w.write_record(ACTIVITY_HEADER)?;
    // household order, then person order
    let mut rows: Vec<(u64, u64)> = set.household_of.iter().map(|(&p, &h)| (h, p)).collect();
    rows.sort_unstable();
    for (hid, pid) in rows {
        for a in &set.chains[&pid].activities {
            w.write_record([
                hid.to_string(),
                pid.to_string(),
                catalog.label(a.kind).to_string(),
                a.start.to_string(),
                a.end.to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Grid file: one row per valid member, `household_id, person_index, person_id, s0..s95`.
pub fn write_grids(path: &Path, rows: &[(u64, Vec<u64>, SlotGrid)]) -> Result<()> {
    let mut w = create_writer(path)?;
    let mut header = vec!["household_id".to_string(), "person_index".into(), "person_id".into()];
    header.extend((0..SLOTS).map(|s| format!("s{s}")));
    w.write_record(&header)?;
    for (hid, person_ids, grid) in rows {
        for (p, pid) in person_ids.iter().enumerate() {
            let mut rec = vec![hid.to_string(), p.to_string(), pid.to_string()];
            rec.extend(grid.rows[p].iter().map(|c| c.code().to_string()));
            w.write_record(&rec)?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_grids(path: &Path) -> Result<Vec<(u64, Vec<u64>, SlotGrid)>> {
    let mut rdr = open_reader(path)?;
    let cols = Columns::new(rdr.headers()?, &["household_id", "person_index", "person_id"], path)?;
    let p = path.display().to_string();
    let mut out: Vec<(u64, Vec<u64>, Vec<[ActivityType; SLOTS]>)> = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let row = row_of(&rec);
        let hid: u64 = cols.parse(&rec, "household_id", row)?;
        let idx: usize = cols.parse(&rec, "person_index", row)?;
        let pid: u64 = cols.parse(&rec, "person_id", row)?;
        let mut codes = [ActivityType::PAD; SLOTS];
        for (s, c) in codes.iter_mut().enumerate() {
            let v: u8 = cols.parse(&rec, &format!("s{s}"), row)?;
            *c = ActivityType::from_code(v)
                .ok_or_else(|| Error::invariant(&p, row, format!("bad code {v}")))?;
        }
        match out.last_mut() {
            Some((h, pids, rows)) if *h == hid => {
                if idx != pids.len() {
                    return Err(Error::invariant(&p, row, "person_index out of sequence"));
                }
                pids.push(pid);
                rows.push(codes);
            }
            _ => {
                if idx != 0 {
                    return Err(Error::invariant(&p, row, "household must start at person_index 0"));
                }
                out.push((hid, vec![pid], vec![codes]));
            }
        }
    }
    out.into_iter()
        .map(|(h, pids, rows)| Ok((h, pids, SlotGrid::from_rows(&rows)?)))
        .collect()
}

/// Hex SHA-256 of arbitrary bytes.
pub fn content_hash(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Sidecar written next to each artifact: producing stage, config hash and inputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArtifactMeta {
    pub stage: String,
    pub config_hash: String,
    pub inputs: Vec<String>,
}

pub fn meta_path(artifact: &Path) -> PathBuf {
    let mut s = artifact.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

pub fn write_meta(artifact: &Path, meta: &ArtifactMeta) -> Result<()> {
    let path = meta_path(artifact);
    let mut f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    let s = serde_json::to_string_pretty(meta)?;
    f.write_all(s.as_bytes()).map_err(|e| Error::io(&path, e))?;
    f.write_all(b"\n").map_err(|e| Error::io(&path, e))?;
    Ok(())
}

pub fn read_meta(artifact: &Path) -> Option<ArtifactMeta> {
    let s = fs::read_to_string(meta_path(artifact)).ok()?;
    serde_json::from_str(&s).ok()
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    let s = serde_json::to_string_pretty(value)?;
    fs::write(path, s + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let s = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&s)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "household_id,person_id,home_taz,income,vehicles,age,employed,student,education,has_license,gender\n";

    fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn reads_two_households() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "pop.csv",
            &format!("{HEADER}1,10,1,3,1,40,1,0,3,1,f\n1,11,1,3,1,12,0,1,1,0,m\n2,20,2,1,0,70,0,0,2,1,male\n"),
        );
        let zones: BTreeSet<u32> = [1, 2].into();
        let pop = read_population(&p, Some(&zones)).unwrap();
        assert_eq!(pop.households.len(), 2);
        assert_eq!(pop.households[0].size(), 2);
        assert_eq!(pop.households[1].members[0].gender, Gender::Male);
    }

    #[test]
    fn negative_age_cites_row() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "pop.csv", &format!("{HEADER}1,10,1,3,1,40,1,0,3,1,f\n1,11,1,3,1,-1,0,1,1,0,m\n"));
        match read_population(&p, None) {
            Err(Error::Invariant { row, message, .. }) => {
                assert_eq!(row, 3);
                assert!(message.contains("age"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_zone_is_referential_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "pop.csv", &format!("{HEADER}1,10,9,3,1,40,1,0,3,1,f\n"));
        let zones: BTreeSet<u32> = [1, 2].into();
        assert!(matches!(read_population(&p, Some(&zones)), Err(Error::UnknownZone { taz: 9, row: 2, .. })));
    }

    #[test]
    fn missing_column_is_schema_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "pop.csv", "household_id,person_id\n1,2\n");
        assert!(matches!(read_population(&p, None), Err(Error::Schema { .. })));
    }

    #[test]
    fn activities_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cat = ActivityCatalog::default();
        let mut set = ChainSet::default();
        set.insert(
            1,
            ActivityChain::new(
                10,
                vec![
                    Activity::new(ActivityType::HOME, 0, 480),
                    Activity::new(ActivityType::WORK, 480, 1020),
                    Activity::new(ActivityType::HOME, 1020, 1440),
                ],
            ),
        );
        set.insert(1, ActivityChain::all_home(11));
        let p = dir.path().join("acts.csv");
        write_activities(&p, &set, &cat).unwrap();
        assert_eq!(read_activities(&p, &cat).unwrap(), set);
    }

    #[test]
    fn activities_with_gap_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "acts.csv",
            "household_id,person_id,activity_type,start_min,end_min\n1,1,Home,0,500\n1,1,Work,600,1440\n",
        );
        assert!(read_activities(&p, &ActivityCatalog::default()).is_err());
    }
}
