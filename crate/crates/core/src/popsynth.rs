//! Population synthesis: iterative proportional fitting of a seed sample to zonal
//! marginals, integerization by weighted sampling, and import of external populations.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::distributions::{Distribution, WeightedIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{self, Columns};
use crate::schedule::Household;

pub const DEFAULT_TOL: f64 = 1e-4;
pub const DEFAULT_MAX_ITER: usize = 100;

/// A category label: `"3"` matches exactly 3, `"4+"` matches 4 or more.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Category {
    pub label: String,
    lo: u32,
    open: bool,
}

impl Category {
    pub fn parse(label: &str) -> Result<Self> {
        let label = label.trim();
        let (num, open) = match label.strip_suffix('+') {
            Some(n) => (n, true),
            None => (label, false),
        };
        let lo = num
            .parse()
            .map_err(|_| Error::Config(format!("category {label:?} is not `k` or `k+`")))?;
        Ok(Self {
            label: label.to_string(),
            lo,
            open,
        })
    }

    pub fn matches(&self, v: u32) -> bool {
        if self.open {
            v >= self.lo
        } else {
            v == self.lo
        }
    }
}

/// Target counts for one household dimension, per zone.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarginalTable {
    pub dimension: String,
    pub categories: Vec<Category>,
    pub targets: BTreeMap<u32, Vec<f64>>,
}

impl MarginalTable {
    pub fn new(dimension: &str, labels: &[&str], targets: BTreeMap<u32, Vec<f64>>) -> Result<Self> {
        let categories = labels.iter().map(|l| Category::parse(l)).collect::<Result<Vec<_>>>()?;
        let t = Self {
            dimension: dimension.to_string(),
            categories,
            targets,
        };
        t.validate()?;
        Ok(t)
    }

    fn validate(&self) -> Result<()> {
        for (zone, counts) in &self.targets {
            if counts.len() != self.categories.len() {
                return Err(Error::Config(format!(
                    "marginal {} zone {zone}: {} counts for {} categories",
                    self.dimension,
                    counts.len(),
                    self.categories.len()
                )));
            }
            if counts.iter().any(|c| !(*c >= 0.0 && c.is_finite())) {
                return Err(Error::Config(format!("marginal {} zone {zone}: negative count", self.dimension)));
            }
        }
        Ok(())
    }

    fn category_of(&self, h: &Household) -> Result<Option<usize>> {
        let v = dimension_value(h, &self.dimension)?;
        Ok(self.categories.iter().position(|c| c.matches(v)))
    }
}

/// Attribute value a marginal dimension controls.
pub fn dimension_value(h: &Household, dimension: &str) -> Result<u32> {
    Ok(match dimension {
        "size" => h.size() as u32,
        "income" => h.income as u32,
        "vehicles" => h.vehicles,
        "workers" => h.members.iter().filter(|p| p.employed).count() as u32,
        other => return Err(Error::Config(format!("unknown marginal dimension {other:?}"))),
    })
}

/// Reads `(zone, dimension, category, count)` rows into one table per dimension.
pub fn read_marginals(path: &Path) -> Result<Vec<MarginalTable>> {
    let mut rdr = io::open_reader(path)?;
    let cols = Columns::new(rdr.headers()?, &["zone", "dimension", "category", "count"], path)?;
    // dimension -> (category labels in order, zone -> label -> count)
    let mut dims: BTreeMap<String, (Vec<String>, BTreeMap<u32, BTreeMap<String, f64>>)> = BTreeMap::new();
    let mut dim_order = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let row = rec.position().map_or(0, |p| p.line());
        let zone: u32 = cols.parse(&rec, "zone", row)?;
        let dim = cols.str(&rec, "dimension", row)?.to_string();
        let cat = cols.str(&rec, "category", row)?.to_string();
        let count: f64 = cols.parse(&rec, "count", row)?;
        if !(count >= 0.0) {
            return Err(Error::invariant(&path.display().to_string(), row, "count < 0"));
        }
        let entry = dims.entry(dim.clone()).or_insert_with(|| {
            dim_order.push(dim.clone());
            (Vec::new(), BTreeMap::new())
        });
        if !entry.0.contains(&cat) {
            entry.0.push(cat.clone());
        }
        entry.1.entry(zone).or_default().insert(cat, count);
    }
    dim_order
        .into_iter()
        .map(|d| {
            let (labels, zones) = &dims[&d];
            let targets = zones
                .iter()
                .map(|(z, m)| (*z, labels.iter().map(|l| m.get(l).copied().unwrap_or(0.0)).collect()))
                .collect();
            let refs: Vec<&str> = labels.iter().map(String::as_str).collect();
            MarginalTable::new(&d, &refs, targets)
        })
        .collect()
}

/// Template households with positive initial weights.
#[derive(Clone, Debug, PartialEq)]
pub struct SeedSample {
    pub households: Vec<Household>,
    pub weights: Vec<f64>,
}

impl SeedSample {
    pub fn new(households: Vec<Household>, weights: Vec<f64>) -> Result<Self> {
        if households.len() != weights.len() {
            return Err(Error::Config("seed weights and households differ in length".into()));
        }
        if weights.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
            return Err(Error::Config("seed weights must be positive".into()));
        }
        Ok(Self { households, weights })
    }

    pub fn uniform(households: Vec<Household>) -> Self {
        let weights = vec![1.0; households.len()];
        Self { households, weights }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZoneFit {
    pub weights: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Max relative marginal gap after each sweep.
    pub gap_history: Vec<f64>,
    pub final_gap: f64,
}

/// Fitted seed weights per zone.
#[derive(Clone, Debug, PartialEq)]
pub struct FittedSample {
    pub seed: SeedSample,
    pub zones: BTreeMap<u32, ZoneFit>,
}

fn max_relative_gap(weights: &[f64], membership: &[Vec<Option<usize>>], targets: &[&Vec<f64>]) -> f64 {
    let mut gap: f64 = 0.0;
    for (m, t) in targets.iter().enumerate() {
        let mut totals = vec![0.0; t.len()];
        for (i, w) in weights.iter().enumerate() {
            if let Some(c) = membership[m][i] {
                totals[c] += w;
            }
        }
        for (cur, tgt) in totals.iter().zip(t.iter()) {
            let g = if *tgt > 0.0 {
                (cur - tgt).abs() / tgt
            } else if *cur > 0.0 {
                f64::INFINITY
            } else {
                0.0
            };
            gap = gap.max(g);
        }
    }
    gap
}

/// Classical IPF per zone: each sweep rescales weights to match every marginal in turn.
/// Stops when the max relative gap is within `tol` or after `max_iter` sweeps.
pub fn ipf_fit(seed: &SeedSample, marginals: &[MarginalTable], tol: f64, max_iter: usize) -> Result<FittedSample> {
    let n = seed.households.len();
    let mut membership = Vec::with_capacity(marginals.len());
    for m in marginals {
        let mut col = Vec::with_capacity(n);
        for h in &seed.households {
            let c = m.category_of(h)?;
            if c.is_none() {
                return Err(Error::Config(format!(
                    "marginal {} categories do not cover seed household {} (value {})",
                    m.dimension,
                    h.household_id,
                    dimension_value(h, &m.dimension)?
                )));
            }
            col.push(c);
        }
        membership.push(col);
    }
    let zones: BTreeSet<u32> = marginals.iter().flat_map(|m| m.targets.keys().copied()).collect();
    let mut fits = BTreeMap::new();
    for zone in zones {
        let targets: Vec<&Vec<f64>> = marginals
            .iter()
            .map(|m| {
                m.targets.get(&zone).ok_or_else(|| {
                    Error::Config(format!("marginal {} has no targets for zone {zone}", m.dimension))
                })
            })
            .collect::<Result<_>>()?;
        for (mi, m) in marginals.iter().enumerate() {
            for (c, &t) in targets[mi].iter().enumerate() {
                let support = membership[mi].iter().any(|x| *x == Some(c));
                if t > 0.0 && !support {
                    return Err(Error::InfeasibleMarginal {
                        zone,
                        dimension: m.dimension.clone(),
                        category: m.categories[c].label.clone(),
                    });
                }
            }
        }
        let mut w = seed.weights.clone();
        let mut history = Vec::new();
        let mut gap = max_relative_gap(&w, &membership, &targets);
        let mut iterations = 0;
        while gap > tol && iterations < max_iter {
            for (mi, t) in targets.iter().enumerate() {
                let mut totals = vec![0.0; t.len()];
                for (i, wi) in w.iter().enumerate() {
                    if let Some(c) = membership[mi][i] {
                        totals[c] += wi;
                    }
                }
                for (i, wi) in w.iter_mut().enumerate() {
                    if let Some(c) = membership[mi][i] {
                        if totals[c] > 0.0 {
                            *wi *= t[c] / totals[c];
                        }
                    }
                }
            }
            iterations += 1;
            gap = max_relative_gap(&w, &membership, &targets);
            history.push(gap);
        }
        if gap > tol {
            log::warn!("IPF zone {zone}: max relative gap {gap:.3e} after {iterations} sweeps");
        }
        fits.insert(
            zone,
            ZoneFit {
                weights: w,
                iterations,
                converged: gap <= tol,
                gap_history: history,
                final_gap: gap,
            },
        );
    }
    Ok(FittedSample {
        seed: seed.clone(),
        zones: fits,
    })
}

/// Draws `n_households` (zone, template) pairs with replacement, proportional to fitted
/// weight. Households and persons get fresh sequential ids starting at 1.
pub fn draw_population(fitted: &FittedSample, n_households: usize, rng_seed: u64) -> Result<Vec<Household>> {
    if n_households == 0 {
        return Ok(Vec::new());
    }
    let mut pool = Vec::new();
    let mut weights = Vec::new();
    for (&zone, fit) in &fitted.zones {
        for (i, &w) in fit.weights.iter().enumerate() {
            if w > 0.0 {
                pool.push((zone, i));
                weights.push(w);
            }
        }
    }
    if pool.is_empty() {
        // a sample with no zonal marginals draws directly from the seed weights
        for (i, &w) in fitted.seed.weights.iter().enumerate() {
            pool.push((fitted.seed.households[i].home_taz, i));
            weights.push(w);
        }
    }
    let dist = WeightedIndex::new(&weights).map_err(|e| Error::Config(format!("fitted weights: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut next_person = 1u64;
    let mut out = Vec::with_capacity(n_households);
    for k in 0..n_households {
        let (zone, t) = pool[dist.sample(&mut rng)];
        let mut h = fitted.seed.households[t].clone();
        h.household_id = k as u64 + 1;
        h.home_taz = zone;
        for p in &mut h.members {
            p.person_id = next_person;
            next_person += 1;
        }
        out.push(h);
    }
    Ok(out)
}

/// Imports an externally synthesized population, validating every record and zone reference.
pub fn import_population(path: &Path, zones: &BTreeSet<u32>) -> Result<Vec<Household>> {
    let pop = io::read_population(path, Some(zones))?;
    if pop.households.iter().any(|h| h.members.is_empty()) {
        return Err(Error::Schema {
            path: path.display().to_string(),
            message: "empty household".into(),
        });
    }
    Ok(pop.households)
}
