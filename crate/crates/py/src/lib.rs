use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use hhdemand::config::PipelineConfig;
use hhdemand::coordination::{build_event_table, EventOptions};
use hhdemand::metrics;
use hhdemand::net::{generate_household, Checkpoint as CoreCheckpoint, SamplingOptions};
use hhdemand::pipeline::Pipeline;
use hhdemand::schedule::{self, ActivityCatalog, ActivityType, Gender, HeadSelection, SLOTS};
use hhdemand::synthetic::{generate_synthetic_corpus, write_corpus, SyntheticRuleSet};
use hhdemand::Error;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        Error::NumericFault { .. } | Error::Diverged { .. } | Error::Gridlock { .. } | Error::Stage { .. } => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn kind(label: &str) -> PyResult<ActivityType> {
    ActivityCatalog::default()
        .parse(label)
        .ok_or_else(|| PyValueError::new_err(format!("unknown activity type {label:?}")))
}

fn codes_to_row(codes: &[u32]) -> PyResult<[ActivityType; SLOTS]> {
    if codes.len() != SLOTS {
        return Err(PyValueError::new_err(format!("expected {SLOTS} codes, got {}", codes.len())));
    }
    let mut row = [ActivityType::HOME; SLOTS];
    for (r, &c) in row.iter_mut().zip(codes) {
        *r = u8::try_from(c).ok().and_then(ActivityType::from_code).ok_or_else(|| PyValueError::new_err(format!("invalid code {c}")))?;
    }
    Ok(row)
}

#[pyclass(from_py_object, module = "pyhhdemand")]
#[derive(Clone)]
struct Person {
    inner: schedule::Person,
}

#[pymethods]
impl Person {
    #[new]
    #[pyo3(signature = (person_id, age, employed=false, student=false, education=0, has_license=false, gender="other"))]
    fn new(person_id: u64, age: u32, employed: bool, student: bool, education: u8, has_license: bool, gender: &str) -> PyResult<Self> {
        let gender = Gender::parse(gender).ok_or_else(|| PyValueError::new_err(format!("unknown gender {gender:?}")))?;
        Ok(Self {
            inner: schedule::Person {
                person_id,
                age,
                employed,
                student,
                education,
                has_license,
                gender,
            },
        })
    }

    #[getter]
    fn person_id(&self) -> u64 {
        self.inner.person_id
    }

    #[getter]
    fn age(&self) -> u32 {
        self.inner.age
    }

    fn __repr__(&self) -> String {
        format!("Person({}, age={})", self.inner.person_id, self.inner.age)
    }
}

#[pyclass(from_py_object, module = "pyhhdemand")]
#[derive(Clone)]
struct Household {
    inner: schedule::Household,
}

#[pymethods]
impl Household {
    #[new]
    #[pyo3(signature = (household_id, members, income=0, vehicles=0, home_taz=1))]
    fn new(household_id: u64, members: Vec<Person>, income: u8, vehicles: u32, home_taz: u32) -> PyResult<Self> {
        if members.is_empty() {
            return Err(PyValueError::new_err("a household needs at least one member"));
        }
        Ok(Self {
            inner: schedule::Household {
                household_id,
                members: members.into_iter().map(|p| p.inner).collect(),
                income,
                vehicles,
                home_taz,
            },
        })
    }

    #[getter]
    fn household_id(&self) -> u64 {
        self.inner.household_id
    }

    fn size(&self) -> usize {
        self.inner.size()
    }

    /// Member index of the household head.
    fn head_index(&self) -> usize {
        schedule::select_household_head(&self.inner, &HeadSelection::default())
    }

    /// Person ids with the head first, as the model orders them.
    fn roster(&self) -> Vec<u64> {
        self.inner.normalized(&HeadSelection::default()).members.iter().map(|p| p.person_id).collect()
    }
}

#[pyclass(from_py_object, module = "pyhhdemand")]
#[derive(Clone)]
struct ActivityChain {
    inner: schedule::ActivityChain,
}

#[pymethods]
impl ActivityChain {
    /// `activities` are `(type, start_min, end_min)` triples covering the day.
    #[new]
    fn new(person_id: u64, activities: Vec<(String, u32, u32)>) -> PyResult<Self> {
        let acts = activities
            .iter()
            .map(|(k, s, e)| Ok(schedule::Activity::new(kind(k)?, *s, *e)))
            .collect::<PyResult<Vec<_>>>()?;
        let inner = schedule::ActivityChain::new(person_id, acts);
        inner.validate().map_err(py_err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn decode(person_id: u64, codes: Vec<u32>) -> PyResult<Self> {
        let row = codes_to_row(&codes)?;
        Ok(Self {
            inner: schedule::decode_grid(person_id, &row).map_err(py_err)?,
        })
    }

    #[getter]
    fn person_id(&self) -> u64 {
        self.inner.person_id
    }

    #[getter]
    fn activities(&self) -> Vec<(String, u32, u32)> {
        let cat = ActivityCatalog::default();
        self.inner.activities.iter().map(|a| (cat.label(a.kind).to_string(), a.start, a.end)).collect()
    }

    /// The 96 slot codes of this chain.
    fn encode(&self) -> PyResult<Vec<u32>> {
        Ok(schedule::encode_chain(&self.inner).map_err(py_err)?.iter().map(|c| c.code() as u32).collect())
    }
}

/// Event table of one household as a list of dicts.
#[pyfunction]
fn event_table<'py>(py: Python<'py>, household: &Household, chains: Vec<ActivityChain>) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let cat = ActivityCatalog::default();
    let chains: Vec<_> = chains.into_iter().map(|c| c.inner).collect();
    let events = build_event_table(&household.inner, &chains, &cat, &HeadSelection::default(), &EventOptions::default()).map_err(py_err)?;
    events
        .iter()
        .map(|e| {
            let d = PyDict::new(py);
            d.set_item("event_id", e.event_id)?;
            d.set_item("activity_type", cat.label(e.activity_type))?;
            d.set_item("coordinated", e.coordinated)?;
            d.set_item("start_window", e.start_window)?;
            let parts: Vec<(u64, &str, u32)> = e.participants.iter().map(|p| (p.person_id, p.role.as_str(), p.start)).collect();
            d.set_item("participants", parts)?;
            Ok(d)
        })
        .collect()
}

#[pyclass(module = "pyhhdemand")]
struct Checkpoint {
    inner: CoreCheckpoint,
}

#[pymethods]
impl Checkpoint {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: CoreCheckpoint::load(&path, &ActivityCatalog::default()).map_err(py_err)?,
        })
    }

    #[getter]
    fn embed_dim(&self) -> usize {
        self.inner.config.embed_dim
    }

    #[getter]
    fn activity_weights(&self) -> Vec<f64> {
        self.inner.activity_weights.clone()
    }

    /// Generates the members' slot codes given the head's 96 codes, rows in `roster()` order.
    #[pyo3(signature = (household, head, seed=0, temperature=1.0))]
    fn generate(&self, py: Python<'_>, household: &Household, head: Vec<u32>, seed: u64, temperature: f64) -> PyResult<Vec<Vec<u32>>> {
        let row = codes_to_row(&head)?;
        let h = household.inner.normalized(&HeadSelection::default());
        let opts = SamplingOptions { temperature, seed };
        let ck = &self.inner;
        let grid = py.detach(|| generate_household(&ck.params, &ck.config, &h, &row, &opts)).map_err(py_err)?;
        Ok(grid.rows[..h.size()].iter().map(|r| r.iter().map(|c| c.code() as u32).collect()).collect())
    }
}

/// Runs the full pipeline for a config file and returns the output directory.
#[pyfunction]
fn run_pipeline(py: Python<'_>, config: PathBuf) -> PyResult<String> {
    let cfg = PipelineConfig::load(&config).map_err(py_err)?;
    let s = py.detach(|| Pipeline::new(cfg)?.run()).map_err(py_err)?;
    Ok(s.out_dir.display().to_string())
}

/// Writes a synthetic corpus with the default planted rules.
#[pyfunction]
#[pyo3(signature = (out_dir, n_households, seed, spouse_joins_meal=0.8, escort_school=0.7))]
fn synthetic_corpus(out_dir: PathBuf, n_households: usize, seed: u64, spouse_joins_meal: f64, escort_school: f64) -> PyResult<()> {
    let rules = SyntheticRuleSet {
        spouse_joins_meal,
        escort_school,
        ..SyntheticRuleSet::default()
    };
    let c = generate_synthetic_corpus(&rules, n_households, seed).map_err(py_err)?;
    std::fs::create_dir_all(&out_dir).map_err(|e| PyIOError::new_err(e.to_string()))?;
    write_corpus(&out_dir, &c, &ActivityCatalog::default()).map_err(py_err)
}

/// Base-2 Jensen-Shannon divergence of two aligned distributions.
#[pyfunction]
fn jsd(p: Vec<f64>, q: Vec<f64>) -> PyResult<f64> {
    if p.len() != q.len() {
        return Err(PyValueError::new_err("distributions differ in length"));
    }
    Ok(metrics::jsd_raw(&p, &q))
}

#[pyfunction]
#[pyo3(signature = (pred, obs, eps=1e-9))]
fn mape(pred: Vec<f64>, obs: Vec<f64>, eps: f64) -> PyResult<f64> {
    Ok(metrics::mape(&pred, &obs, eps).map_err(py_err)?.value)
}

#[pyfunction]
fn cosine_similarity(a: Vec<f64>, b: Vec<f64>) -> PyResult<f64> {
    metrics::cosine_similarity(&a, &b).map_err(py_err)
}

#[pymodule]
fn pyhhdemand(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Person>()?;
    m.add_class::<Household>()?;
    m.add_class::<ActivityChain>()?;
    m.add_class::<Checkpoint>()?;
    m.add_function(wrap_pyfunction!(event_table, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    m.add_function(wrap_pyfunction!(synthetic_corpus, m)?)?;
    m.add_function(wrap_pyfunction!(jsd, m)?)?;
    m.add_function(wrap_pyfunction!(mape, m)?)?;
    m.add_function(wrap_pyfunction!(cosine_similarity, m)?)?;
    m.add("SLOTS", SLOTS)?;
    Ok(())
}
