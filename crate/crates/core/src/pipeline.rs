//! Stage functions and the resumable end-to-end runner.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::coordination::{build_event_table, compute_activity_weights, write_events, Event, EventOptions};
use crate::error::{Error, Result};
use crate::io::{self, read_activities, read_population, write_activities, write_grids, write_json, write_population, ArtifactMeta, ChainSet};
use crate::location::{
    assign_household, default_targets, read_targets, read_zones, refine_all, write_plans, LocatedActivity, LocationParams, Refinement, Samplers,
    ZoneTable,
};
use crate::mesosim::assign::{write_corridor, write_gaps, write_link_stats, write_od, write_trips, write_vmt};
use crate::mesosim::{init_modes, iterate_assignment, read_network, read_nodes, summarize, trips_from_plans, Assignment, AssignmentSettings, Network, Summary, Trip};
use crate::net::{
    build_samples, generate_household, household_rng, schema_hash, train, Checkpoint, ModelConfig, SamplingOptions, SeedChainModel, TrainOutput,
    TrainSettings, CHECKPOINT_FORMAT,
};
use crate::popsynth::{draw_population, ipf_fit, read_marginals, SeedSample};
use crate::schedule::{decode_grid, ActivityCatalog, ActivityChain, HeadSelection, Household, SlotGrid};
use crate::synthetic::HOUSEHOLDS_FILE;
use crate::validate::{validate_dirs, ValidationReport, ACTIVITIES_FILE, CORRIDOR_FILE, EVENTS_FILE, OD_FILE, REPORT_FILE, VMT_FILE};

pub const POPULATION_FILE: &str = "population.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const SEED_MODEL_FILE: &str = "seed_model.json";
pub const TRAIN_LOG_FILE: &str = "train_log.json";
pub const GRIDS_FILE: &str = "grids.csv";
pub const PLANS_FILE: &str = "plans.csv";
pub const REFINEMENT_FILE: &str = "refinement.json";
pub const TRIPS_FILE: &str = "trips.csv";
pub const LINK_STATS_FILE: &str = "link_stats.csv";
pub const GAPS_FILE: &str = "gaps.csv";
pub const REFERENCE_DIR: &str = "reference";
pub const VALIDATION_DIR: &str = "validation";

/// Draws `n` households from a seed sample, IPF-fitted to zonal marginals when given.
pub fn synthesize_population(
    seed_sample: &Path,
    marginals: Option<&Path>,
    zones: Option<&BTreeSet<u32>>,
    n: usize,
    tol: f64,
    max_iter: usize,
    rng_seed: u64,
) -> Result<Vec<Household>> {
    let file = read_population(seed_sample, None)?;
    let seed = SeedSample::new(file.households, file.weights)?;
    let tables = match marginals {
        Some(p) => read_marginals(p)?,
        None => Vec::new(),
    };
    if let Some(zs) = zones {
        for t in &tables {
            if let Some(z) = t.targets.keys().find(|z| !zs.contains(z)) {
                return Err(Error::Config(format!("marginal {} references unknown zone {z}", t.dimension)));
            }
        }
    }
    let fitted = ipf_fit(&seed, &tables, tol, max_iter)?;
    for (z, f) in &fitted.zones {
        if !f.converged {
            log::warn!("ipf zone {z}: not converged after {} sweeps (gap {:.2e})", f.iterations, f.final_gap);
        }
    }
    draw_population(&fitted, n, rng_seed)
}

/// Builds every household's event table. `chains` must hold one chain per member.
pub fn build_events(households: &[Household], chains: &ChainSet, catalog: &ActivityCatalog, policy: &HeadSelection, opts: &EventOptions) -> Result<Vec<Event>> {
    let mut out = Vec::new();
    for h in households {
        let cs = chains.for_household(h).ok_or(Error::Arity {
            household_id: h.household_id,
            members: h.size(),
            chains: 0,
        })?;
        out.extend(build_event_table(h, &cs, catalog, policy, opts)?);
    }
    Ok(out)
}

pub struct Trained {
    pub checkpoint: Checkpoint,
    pub seed_model: SeedChainModel,
    pub output: TrainOutput,
    /// Corpus events, kept as the validation reference.
    pub events: Vec<Event>,
}

/// Fits the seed-chain model on corpus heads and trains DeepCAM on the corpus.
#[allow(clippy::too_many_arguments)]
pub fn train_from_corpus(
    households: &[Household],
    chains: &ChainSet,
    model: &ModelConfig,
    settings: &TrainSettings,
    smoothing: f64,
    catalog: &ActivityCatalog,
    policy: &HeadSelection,
    opts: &EventOptions,
) -> Result<Trained> {
    if households.len() < 10 {
        return Err(Error::Config(format!("training corpus has {} households, need at least 10", households.len())));
    }
    let samples = build_samples(households, chains, policy)?;
    let heads: Vec<_> = samples.iter().map(|s| (&s.household.members[0], &s.grid.rows[0])).collect();
    let seed_model = SeedChainModel::fit(&heads, smoothing)?;
    let events = build_events(households, chains, catalog, policy, opts)?;
    let weights = compute_activity_weights(&events);
    let output = train(&samples, model, settings, &weights, None)?;
    let checkpoint = Checkpoint {
        format: CHECKPOINT_FORMAT.to_string(),
        schema_hash: schema_hash(catalog),
        config: model.clone(),
        activity_weights: weights,
        params: output.params.clone(),
    };
    Ok(Trained {
        checkpoint,
        seed_model,
        output,
        events,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationSeeds {
    pub seed_chain: u64,
    pub generate: u64,
    pub seed_temperature: f64,
    pub temperature: f64,
}

/// What generation produces: grids of the modeled members, and a chain for everyone.
#[derive(Clone, Debug, Default)]
pub struct Generated {
    pub grids: Vec<(u64, Vec<u64>, SlotGrid)>,
    pub chains: ChainSet,
}

/// Samples each head's day from the seed model, then the other members with DeepCAM.
/// Members beyond the model's `p_max` stay Home all day.
pub fn generate_population(
    ck: &Checkpoint,
    seed_model: &SeedChainModel,
    households: &[Household],
    policy: &HeadSelection,
    seeds: &GenerationSeeds,
) -> Result<Generated> {
    let mut out = Generated::default();
    let opts = SamplingOptions {
        temperature: seeds.temperature,
        seed: seeds.generate,
    };
    for h in households {
        let mut hn = h.normalized(policy);
        let mut rest: Vec<u64> = h.members.iter().map(|p| p.person_id).filter(|id| !hn.members.iter().any(|m| m.person_id == *id)).collect();
        if hn.size() > ck.config.p_max {
            rest.extend(hn.members.drain(ck.config.p_max..).map(|p| p.person_id));
        }
        let mut rng = household_rng(seeds.seed_chain, h.household_id);
        let head = seed_model.sample(&hn.members[0], seeds.seed_temperature, &mut rng);
        let grid = generate_household(&ck.params, &ck.config, &hn, &head, &opts)?;
        let pids: Vec<u64> = hn.members.iter().map(|p| p.person_id).collect();
        for (pid, row) in pids.iter().zip(&grid.rows) {
            out.chains.insert(h.household_id, decode_grid(*pid, row)?);
        }
        for pid in rest {
            out.chains.insert(h.household_id, ActivityChain::all_home(pid));
        }
        out.grids.push((h.household_id, pids, grid));
    }
    Ok(out)
}

pub struct Located {
    pub plans: Vec<LocatedActivity>,
    pub refinement: Vec<Refinement>,
}

/// Locates every household, then refines zone shares globally.
#[allow(clippy::too_many_arguments)]
pub fn locate_population(
    households: &[Household],
    chains: &ChainSet,
    events: &[Event],
    zones: &ZoneTable,
    samplers: &Samplers,
    targets: &[Vec<f64>],
    params: &LocationParams,
    seed: u64,
) -> Result<Located> {
    let mut by_hh: BTreeMap<u64, Vec<Event>> = BTreeMap::new();
    for e in events {
        by_hh.entry(e.household_id).or_default().push(e.clone());
    }
    let mut plans = Vec::new();
    let mut placements = Vec::new();
    for h in households {
        let cs = chains.for_household(h).ok_or(Error::Arity {
            household_id: h.household_id,
            members: h.size(),
            chains: 0,
        })?;
        let ordered: Vec<ActivityChain> = h
            .members
            .iter()
            .filter_map(|p| cs.iter().find(|c| c.person_id == p.person_id).cloned())
            .collect();
        let evs = by_hh.get(&h.household_id).map_or(&[][..], |v| v.as_slice());
        let mut rng = household_rng(seed, h.household_id);
        let (loc, mut pl) = assign_household(h, &ordered, evs, zones, samplers, params, &mut rng)?;
        let off = plans.len();
        for p in &mut pl {
            p.members.iter_mut().for_each(|m| *m += off);
        }
        plans.extend(loc);
        placements.extend(pl);
    }
    let refinement = refine_all(&mut plans, &mut placements, zones, targets, params, seed);
    Ok(Located { plans, refinement })
}

pub struct Simulated {
    pub trips: Vec<Trip>,
    pub assignment: Assignment,
    pub summary: Summary,
}

/// Derives trips from plans, splits modes and runs the iterative assignment.
pub fn simulate_plans(
    net: &Network,
    zones: &ZoneTable,
    households: &[Household],
    plans: &[LocatedActivity],
    car_share: f64,
    settings: &AssignmentSettings,
    corridor: &[u32],
) -> Result<Simulated> {
    let zone_nodes = net.zone_nodes(zones)?;
    let mut trips = trips_from_plans(plans);
    let vehicles: HashMap<u64, u32> = households.iter().map(|h| (h.household_id, h.vehicles)).collect();
    init_modes(&mut trips, &vehicles, car_share, settings.seed)?;
    let assignment = iterate_assignment(net, &trips, &zone_nodes, settings)?;
    let summary = summarize(&assignment.output, net, &trips, corridor)?;
    Ok(Simulated { trips, assignment, summary })
}

pub fn load_network(network: &Path, nodes: Option<&Path>) -> Result<Network> {
    let mut net = read_network(network)?;
    if let Some(p) = nodes {
        net.set_coordinates(read_nodes(p)?)?;
    }
    Ok(net)
}

/// Writes every simulation artifact into `dir`.
pub fn write_simulation(dir: &Path, net: &Network, sim: &Simulated) -> Result<()> {
    write_trips(&dir.join(TRIPS_FILE), &sim.trips, &sim.assignment)?;
    write_link_stats(&dir.join(LINK_STATS_FILE), &sim.assignment.output, net)?;
    write_gaps(&dir.join(GAPS_FILE), &sim.assignment.gap_history)?;
    write_vmt(&dir.join(VMT_FILE), &sim.summary)?;
    write_od(&dir.join(OD_FILE), &sim.summary)?;
    write_corridor(&dir.join(CORRIDOR_FILE), &sim.summary.corridor)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    SynthPop,
    Train,
    Generate,
    Events,
    Assign,
    Simulate,
    Validate,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::SynthPop,
        Stage::Train,
        Stage::Generate,
        Stage::Events,
        Stage::Assign,
        Stage::Simulate,
        Stage::Validate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::SynthPop => "synth-pop",
            Stage::Train => "train",
            Stage::Generate => "generate",
            Stage::Events => "events",
            Stage::Assign => "assign",
            Stage::Simulate => "simulate",
            Stage::Validate => "validate",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|st| st.name() == s)
    }

    /// Files in the output directory this stage writes, primary artifact first.
    pub fn outputs(self) -> &'static [&'static str] {
        match self {
            Stage::SynthPop => &[POPULATION_FILE],
            Stage::Train => &[CHECKPOINT_FILE, SEED_MODEL_FILE, TRAIN_LOG_FILE, "reference/activities.csv", "reference/events.csv"],
            Stage::Generate => &[ACTIVITIES_FILE, GRIDS_FILE],
            Stage::Events => &[EVENTS_FILE],
            Stage::Assign => &[PLANS_FILE, REFINEMENT_FILE],
            Stage::Simulate => &[TRIPS_FILE, LINK_STATS_FILE, GAPS_FILE, VMT_FILE, OD_FILE, CORRIDOR_FILE],
            Stage::Validate => &["validation/report.json"],
        }
    }

    /// Upstream stages whose artifacts this stage reads.
    fn upstream(self) -> &'static [Stage] {
        match self {
            Stage::SynthPop | Stage::Train => &[],
            Stage::Generate => &[Stage::SynthPop, Stage::Train],
            Stage::Events => &[Stage::SynthPop, Stage::Generate],
            Stage::Assign => &[Stage::SynthPop, Stage::Generate, Stage::Events],
            Stage::Simulate => &[Stage::SynthPop, Stage::Assign],
            Stage::Validate => &[Stage::Train, Stage::Generate, Stage::Events, Stage::Simulate],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageRun {
    pub stage: Stage,
    /// False when valid artifacts were already on disk.
    pub executed: bool,
    pub key: String,
}

#[derive(Debug)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    pub stages: Vec<StageRun>,
    pub report: ValidationReport,
}

/// Runs stages in order over one config, skipping stages whose artifacts are current.
#[derive(Debug)]
pub struct Pipeline {
    pub cfg: PipelineConfig,
    pub catalog: ActivityCatalog,
    pub policy: HeadSelection,
}

impl Pipeline {
    /// Validates the config, including that every input path exists.
    pub fn new(cfg: PipelineConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            catalog: ActivityCatalog::default(),
            policy: HeadSelection::default(),
        })
    }

    fn out(&self, name: &str) -> PathBuf {
        self.cfg.paths.out_dir.join(name)
    }

    fn external_inputs(&self, stage: Stage) -> Vec<PathBuf> {
        let p = &self.cfg.paths;
        let corpus = || vec![p.corpus.join(HOUSEHOLDS_FILE), p.corpus.join(ACTIVITIES_FILE)];
        match stage {
            Stage::SynthPop => [Some(p.seed_sample.clone()), p.marginals.clone(), Some(p.zones.clone())].into_iter().flatten().collect(),
            Stage::Train => {
                let mut v = corpus();
                v.extend(p.checkpoint.clone());
                if let Some(r) = &p.reference {
                    v.extend([r.join(ACTIVITIES_FILE), r.join(EVENTS_FILE)].into_iter().filter(|f| f.exists()));
                }
                v
            }
            Stage::Assign => [Some(p.zones.clone()), p.samplers.clone(), p.targets.clone()].into_iter().flatten().collect(),
            Stage::Simulate => [Some(p.zones.clone()), Some(p.network.clone()), p.nodes.clone()].into_iter().flatten().collect(),
            Stage::Generate | Stage::Events | Stage::Validate => Vec::new(),
        }
    }

    fn settings_json(&self, stage: Stage) -> String {
        let c = &self.cfg;
        let v = match stage {
            Stage::SynthPop => serde_json::json!({"population": c.population, "seed": c.seeds.popsynth}),
            Stage::Train => serde_json::json!({
                "model": c.model, "training": c.training, "seed": c.seeds.train,
                "smoothing": c.generation.smoothing, "events": c.events,
            }),
            Stage::Generate => serde_json::json!({"generation": c.generation, "seed_chain": c.seeds.seed_chain, "seed": c.seeds.generate}),
            Stage::Events => serde_json::json!({"events": c.events}),
            Stage::Assign => serde_json::json!({"location": c.location, "seed": c.seeds.location}),
            Stage::Simulate => serde_json::json!({"simulation": c.simulation, "seed": c.seeds.assignment}),
            Stage::Validate => serde_json::json!({"validation": c.validation}),
        };
        serde_json::to_string(&v).expect("settings serialize")
    }

    /// Hash of the stage's settings and the contents of everything it reads.
    pub fn stage_key(&self, stage: Stage) -> Result<String> {
        let mut desc = format!("{}|{}", stage.name(), self.settings_json(stage));
        for f in self.external_inputs(stage) {
            let bytes = fs::read(&f).map_err(|e| Error::io(&f, e))?;
            desc.push_str(&format!("|{}", io::content_hash(&bytes)));
        }
        for up in stage.upstream() {
            for name in up.outputs() {
                let f = self.out(name);
                let bytes = fs::read(&f).map_err(|e| Error::io(&f, e))?;
                desc.push_str(&format!("|{name}={}", io::content_hash(&bytes)));
            }
        }
        Ok(io::content_hash(desc.as_bytes()))
    }

    /// True when every output exists and its sidecar names this stage and key.
    pub fn is_current(&self, stage: Stage, key: &str) -> bool {
        stage.outputs().iter().all(|name| {
            let f = self.out(name);
            f.exists() && io::read_meta(&f).is_some_and(|m| m.stage == stage.name() && m.config_hash == key)
        })
    }

    fn stamp(&self, stage: Stage, key: &str) -> Result<()> {
        let mut inputs: Vec<String> = self.external_inputs(stage).iter().map(|p| p.display().to_string()).collect();
        for up in stage.upstream() {
            inputs.extend(up.outputs().iter().map(|s| s.to_string()));
        }
        for name in stage.outputs() {
            io::write_meta(
                &self.out(name),
                &ArtifactMeta {
                    stage: stage.name().to_string(),
                    config_hash: key.to_string(),
                    inputs: inputs.clone(),
                },
            )?;
        }
        Ok(())
    }

    fn zones(&self) -> Result<ZoneTable> {
        read_zones(&self.cfg.paths.zones, &self.catalog)
    }

    fn population(&self, zones: &ZoneTable) -> Result<Vec<Household>> {
        Ok(read_population(&self.out(POPULATION_FILE), Some(&zones.ids()))?.households)
    }

    fn chains(&self) -> Result<ChainSet> {
        read_activities(&self.out(ACTIVITIES_FILE), &self.catalog)
    }

    fn execute(&self, stage: Stage) -> Result<()> {
        let c = &self.cfg;
        match stage {
            Stage::SynthPop => {
                let zones = self.zones()?;
                let hh = synthesize_population(
                    &c.paths.seed_sample,
                    c.paths.marginals.as_deref(),
                    Some(&zones.ids()),
                    c.population.n_households,
                    c.population.ipf_tol,
                    c.population.ipf_max_iter,
                    c.seeds.popsynth,
                )?;
                if let Some(h) = hh.iter().find(|h| zones.get(h.home_taz).is_none()) {
                    return Err(Error::UnknownZone {
                        path: c.paths.seed_sample.display().to_string(),
                        row: h.household_id,
                        taz: h.home_taz,
                    });
                }
                write_population(&self.out(POPULATION_FILE), &hh, None)
            }
            Stage::Train => self.run_train(),
            Stage::Generate => {
                let zones = self.zones()?;
                let hh = self.population(&zones)?;
                let ck = Checkpoint::load(&self.out(CHECKPOINT_FILE), &self.catalog)?;
                let sm: SeedChainModel = io::read_json(&self.out(SEED_MODEL_FILE))?;
                let g = generate_population(
                    &ck,
                    &sm,
                    &hh,
                    &self.policy,
                    &GenerationSeeds {
                        seed_chain: c.seeds.seed_chain,
                        generate: c.seeds.generate,
                        seed_temperature: c.generation.seed_temperature,
                        temperature: c.generation.temperature,
                    },
                )?;
                write_activities(&self.out(ACTIVITIES_FILE), &g.chains, &self.catalog)?;
                write_grids(&self.out(GRIDS_FILE), &g.grids)
            }
            Stage::Events => {
                let zones = self.zones()?;
                let hh = self.population(&zones)?;
                let ev = build_events(&hh, &self.chains()?, &self.catalog, &self.policy, &c.events)?;
                write_events(&self.out(EVENTS_FILE), &ev, &self.catalog)
            }
            Stage::Assign => {
                let zones = self.zones()?;
                let hh = self.population(&zones)?;
                let chains = self.chains()?;
                let ev = crate::coordination::read_events(&self.out(EVENTS_FILE), &self.catalog, &chains)?;
                let samplers = match &c.paths.samplers {
                    Some(p) => Samplers::read(p)?,
                    None => Samplers::default(),
                };
                let targets = match &c.paths.targets {
                    Some(p) => read_targets(p, &zones, &self.catalog)?,
                    None => default_targets(&zones),
                };
                let loc = locate_population(&hh, &chains, &ev, &zones, &samplers, &targets, &c.location, c.seeds.location)?;
                write_plans(&self.out(PLANS_FILE), &loc.plans, &self.catalog)?;
                write_json(&self.out(REFINEMENT_FILE), &loc.refinement)
            }
            Stage::Simulate => {
                let zones = self.zones()?;
                let hh = self.population(&zones)?;
                let plans = crate::location::read_plans(&self.out(PLANS_FILE), &self.catalog)?;
                let net = load_network(&c.paths.network, c.paths.nodes.as_deref())?;
                let sim = simulate_plans(&net, &zones, &hh, &plans, c.simulation.car_share, &c.simulation.assignment(c.seeds.assignment), &c.simulation.corridor)?;
                write_simulation(&c.paths.out_dir, &net, &sim)
            }
            Stage::Validate => {
                let report = validate_dirs(&c.paths.out_dir, &self.out(REFERENCE_DIR), &self.catalog, &c.validation)?;
                report.write(&self.out(VALIDATION_DIR))
            }
        }
    }

    fn run_train(&self) -> Result<()> {
        let c = &self.cfg;
        let corpus_hh = read_population(&c.paths.corpus.join(HOUSEHOLDS_FILE), None)?.households;
        let corpus_chains = read_activities(&c.paths.corpus.join(ACTIVITIES_FILE), &self.catalog)?;
        let settings = TrainSettings {
            seed: c.seeds.train,
            ..c.training.clone()
        };
        let (ck, sm, log, events) = match &c.paths.checkpoint {
            Some(p) => {
                let ck = Checkpoint::load(p, &self.catalog)?;
                let samples = build_samples(&corpus_hh, &corpus_chains, &self.policy)?;
                let heads: Vec<_> = samples.iter().map(|s| (&s.household.members[0], &s.grid.rows[0])).collect();
                let sm = SeedChainModel::fit(&heads, c.generation.smoothing)?;
                let events = build_events(&corpus_hh, &corpus_chains, &self.catalog, &self.policy, &c.events)?;
                (ck, sm, serde_json::json!({"pretrained": p.display().to_string()}), events)
            }
            None => {
                let t = train_from_corpus(&corpus_hh, &corpus_chains, &c.model, &settings, c.generation.smoothing, &self.catalog, &self.policy, &c.events)?;
                let log = serde_json::json!({"best_epoch": t.output.best_epoch, "history": t.output.history});
                (t.checkpoint, t.seed_model, log, t.events)
            }
        };
        ck.save(&self.out(CHECKPOINT_FILE))?;
        write_json(&self.out(SEED_MODEL_FILE), &sm)?;
        write_json(&self.out(TRAIN_LOG_FILE), &log)?;
        let rdir = self.out(REFERENCE_DIR);
        fs::create_dir_all(&rdir).map_err(|e| Error::io(&rdir, e))?;
        match &c.paths.reference {
            Some(r) if r.join(ACTIVITIES_FILE).exists() => {
                for f in [ACTIVITIES_FILE, EVENTS_FILE, OD_FILE, VMT_FILE, CORRIDOR_FILE] {
                    if r.join(f).exists() {
                        fs::copy(r.join(f), rdir.join(f)).map_err(|e| Error::io(r.join(f), e))?;
                    }
                }
                if !r.join(EVENTS_FILE).exists() {
                    let chains = read_activities(&r.join(ACTIVITIES_FILE), &self.catalog)?;
                    let hh = read_population(&r.join(HOUSEHOLDS_FILE), None)?.households;
                    write_events(&rdir.join(EVENTS_FILE), &build_events(&hh, &chains, &self.catalog, &self.policy, &c.events)?, &self.catalog)?;
                }
                Ok(())
            }
            _ => {
                write_activities(&rdir.join(ACTIVITIES_FILE), &corpus_chains, &self.catalog)?;
                write_events(&rdir.join(EVENTS_FILE), &events, &self.catalog)
            }
        }
    }

    /// Runs one stage unless its artifacts are current. Upstream artifacts must exist.
    pub fn run_stage(&self, stage: Stage) -> Result<StageRun> {
        let key = self.stage_key(stage)?;
        if self.is_current(stage, &key) {
            log::info!("stage {}: up to date", stage.name());
            return Ok(StageRun { stage, executed: false, key });
        }
        log::info!("stage {}: running", stage.name());
        self.execute(stage)?;
        self.stamp(stage, &key)?;
        Ok(StageRun { stage, executed: true, key })
    }

    /// Runs every stage in order. A failure names the stage and the last good artifact.
    pub fn run(&self) -> Result<RunSummary> {
        let dir = &self.cfg.paths.out_dir;
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut stages = Vec::new();
        let mut last_good: Option<PathBuf> = None;
        for stage in Stage::ALL {
            match self.run_stage(stage) {
                Ok(r) => {
                    last_good = Some(self.out(stage.outputs()[0]));
                    stages.push(r);
                }
                Err(e) => {
                    return Err(Error::Stage {
                        stage: stage.name().to_string(),
                        last_good,
                        source: Box::new(e),
                    })
                }
            }
        }
        let report = io::read_json(&self.out(VALIDATION_DIR).join(REPORT_FILE))?;
        Ok(RunSummary {
            out_dir: dir.clone(),
            stages,
            report,
        })
    }
}

pub fn run_pipeline(cfg: PipelineConfig) -> Result<RunSummary> {
    Pipeline::new(cfg)?.run()
}
