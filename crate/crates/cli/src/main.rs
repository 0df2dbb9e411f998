use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;

use hhdemand::config::{GenerationSettings, PipelineConfig, PopulationSettings, SimulationSettings};
use hhdemand::coordination::{read_events, write_events, EventOptions};
use hhdemand::io::{read_activities, read_json, read_population, write_activities, write_grids, write_json};
use hhdemand::location::{default_targets, read_plans, read_targets, read_zones, write_plans, LocationParams, Samplers};
use hhdemand::net::{Checkpoint, ModelConfig, SeedChainModel, TrainSettings};
use hhdemand::pipeline::{self, GenerationSeeds, Pipeline, Stage};
use hhdemand::schedule::{ActivityCatalog, HeadSelection};
use hhdemand::synthetic::{generate_synthetic_corpus, write_corpus, SyntheticRuleSet, HOUSEHOLDS_FILE};
use hhdemand::validate::{validate_dirs, ValidationConfig, ACTIVITIES_FILE};
use hhdemand::{Error, Result};

#[derive(Parser)]
#[command(name = "hhdemand", version, about = "Household-coordinated travel demand pipeline")]
struct Cli {
    /// Log progress at info level (twice for debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// TOML file; sections matching the subcommand supply its parameters.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Cmd {
    /// Fit a seed sample to zonal marginals and draw a population.
    SynthPop {
        #[arg(long)]
        marginals: Option<PathBuf>,
        #[arg(long)]
        seed: PathBuf,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        zones: Option<PathBuf>,
        #[arg(long)]
        rng_seed: u64,
        #[command(flatten)]
        common: Common,
    },
    /// Write a synthetic corpus with planted coordination rules.
    GenCorpus {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        rng_seed: u64,
        #[command(flatten)]
        common: Common,
    },
    /// Train DeepCAM and the seed-chain model on a corpus.
    Train {
        /// Corpus directory, or its activities file with households.csv alongside.
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        rng_seed: Option<u64>,
        #[command(flatten)]
        common: Common,
    },
    /// Generate member schedules for a population.
    Generate {
        #[arg(long)]
        ckpt: PathBuf,
        /// Defaults to the seed model written next to the checkpoint.
        #[arg(long)]
        seed_model: Option<PathBuf>,
        #[arg(long)]
        pop: PathBuf,
        #[arg(long)]
        rng_seed: u64,
        /// Activities file; defaults to activities.csv beside the grids.
        #[arg(long)]
        activities: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Build the event table.
    Events {
        #[arg(long)]
        activities: PathBuf,
        #[arg(long)]
        pop: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Assign activity locations.
    Assign {
        #[arg(long)]
        activities: PathBuf,
        #[arg(long)]
        events: PathBuf,
        #[arg(long)]
        pop: PathBuf,
        #[arg(long)]
        zones: PathBuf,
        #[arg(long)]
        samplers: Option<PathBuf>,
        #[arg(long)]
        targets: Option<PathBuf>,
        #[arg(long)]
        rng_seed: u64,
        #[command(flatten)]
        common: Common,
    },
    /// Route and simulate located plans; writes into the output directory.
    Simulate {
        #[arg(long)]
        plans: PathBuf,
        #[arg(long)]
        pop: PathBuf,
        #[arg(long)]
        zones: PathBuf,
        #[arg(long)]
        network: PathBuf,
        #[arg(long)]
        nodes: Option<PathBuf>,
        #[arg(long)]
        rng_seed: u64,
        #[command(flatten)]
        common: Common,
    },
    /// Compare a generated artifact directory with a reference one.
    Validate {
        #[arg(long)]
        generated: PathBuf,
        #[arg(long)]
        reference: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Run every stage from a pipeline config.
    Pipeline {
        #[arg(long)]
        config: PathBuf,
        /// Overrides paths.out_dir.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides every stage seed.
        #[arg(long)]
        rng_seed: Option<u64>,
        /// Run a single stage; its upstream artifacts must exist.
        #[arg(long)]
        stage: Option<String>,
    },
}

/// Reads `[name]` from an optional TOML file, or the section's defaults.
fn section<T: DeserializeOwned + Default>(config: Option<&Path>, name: &str) -> Result<T> {
    let Some(path) = config else { return Ok(T::default()) };
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let table: toml::Table = text.parse().map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    match table.get(name) {
        Some(v) => v.clone().try_into().map_err(|e| Error::Config(format!("{}: [{name}]: {e}", path.display()))),
        None => Ok(T::default()),
    }
}

fn corpus_files(corpus: &Path) -> (PathBuf, PathBuf) {
    if corpus.is_dir() {
        (corpus.join(HOUSEHOLDS_FILE), corpus.join(ACTIVITIES_FILE))
    } else {
        (corpus.with_file_name(HOUSEHOLDS_FILE), corpus.to_path_buf())
    }
}

/// `model.json` gets its seed model at `model.seed.json`.
fn seed_model_path(ckpt: &Path) -> PathBuf {
    let stem = ckpt.file_stem().map_or("checkpoint".into(), |s| s.to_string_lossy().into_owned());
    ckpt.with_file_name(format!("{stem}.seed.json"))
}

fn run(cmd: Cmd) -> Result<()> {
    let catalog = ActivityCatalog::default();
    let policy = HeadSelection::default();
    match cmd {
        Cmd::SynthPop {
            marginals,
            seed,
            n,
            zones,
            rng_seed,
            common,
        } => {
            let ps: PopulationSettings = section(common.config.as_deref(), "population")?;
            let zone_ids = zones.map(|z| read_zones(&z, &catalog).map(|t| t.ids())).transpose()?;
            let hh = pipeline::synthesize_population(
                &seed,
                marginals.as_deref(),
                zone_ids.as_ref(),
                n.unwrap_or(ps.n_households),
                ps.ipf_tol,
                ps.ipf_max_iter,
                rng_seed,
            )?;
            hhdemand::io::write_population(&common.out, &hh, None)?;
            log::info!("wrote {} households to {}", hh.len(), common.out.display());
        }
        Cmd::GenCorpus { n, rng_seed, common } => {
            let rules: SyntheticRuleSet = section(common.config.as_deref(), "rules")?;
            let corpus = generate_synthetic_corpus(&rules, n, rng_seed)?;
            std::fs::create_dir_all(&common.out).map_err(|e| Error::io(&common.out, e))?;
            write_corpus(&common.out, &corpus, &catalog)?;
        }
        Cmd::Train { corpus, rng_seed, common } => {
            let cfg = common.config.as_deref();
            let model: ModelConfig = section(cfg, "model")?;
            let mut settings: TrainSettings = section(cfg, "training")?;
            if let Some(s) = rng_seed {
                settings.seed = s;
            }
            let gen: GenerationSettings = section(cfg, "generation")?;
            let events: EventOptions = section(cfg, "events")?;
            let (hf, af) = corpus_files(&corpus);
            let hh = read_population(&hf, None)?.households;
            let chains = read_activities(&af, &catalog)?;
            let t = pipeline::train_from_corpus(&hh, &chains, &model, &settings, gen.smoothing, &catalog, &policy, &events)?;
            t.checkpoint.save(&common.out)?;
            write_json(&seed_model_path(&common.out), &t.seed_model)?;
            log::info!("best epoch {} of {}", t.output.best_epoch, settings.epochs);
        }
        Cmd::Generate {
            ckpt,
            seed_model,
            pop,
            rng_seed,
            activities,
            common,
        } => {
            let gen: GenerationSettings = section(common.config.as_deref(), "generation")?;
            let ck = Checkpoint::load(&ckpt, &catalog)?;
            let sm: SeedChainModel = read_json(&seed_model.unwrap_or_else(|| seed_model_path(&ckpt)))?;
            let hh = read_population(&pop, None)?.households;
            let seeds = GenerationSeeds {
                seed_chain: rng_seed,
                generate: rng_seed.wrapping_add(1),
                seed_temperature: gen.seed_temperature,
                temperature: gen.temperature,
            };
            let g = pipeline::generate_population(&ck, &sm, &hh, &policy, &seeds)?;
            write_grids(&common.out, &g.grids)?;
            let act = activities.unwrap_or_else(|| common.out.with_file_name(ACTIVITIES_FILE));
            write_activities(&act, &g.chains, &catalog)?;
        }
        Cmd::Events { activities, pop, common } => {
            let opts: EventOptions = section(common.config.as_deref(), "events")?;
            let hh = read_population(&pop, None)?.households;
            let chains = read_activities(&activities, &catalog)?;
            let ev = pipeline::build_events(&hh, &chains, &catalog, &policy, &opts)?;
            write_events(&common.out, &ev, &catalog)?;
        }
        Cmd::Assign {
            activities,
            events,
            pop,
            zones,
            samplers,
            targets,
            rng_seed,
            common,
        } => {
            let params: LocationParams = section(common.config.as_deref(), "location")?;
            params.validate()?;
            let zt = read_zones(&zones, &catalog)?;
            let hh = read_population(&pop, Some(&zt.ids()))?.households;
            let chains = read_activities(&activities, &catalog)?;
            let ev = read_events(&events, &catalog, &chains)?;
            let samplers = samplers.map(|p| Samplers::read(&p)).transpose()?.unwrap_or_default();
            let targets = match targets {
                Some(p) => read_targets(&p, &zt, &catalog)?,
                None => default_targets(&zt),
            };
            let loc = pipeline::locate_population(&hh, &chains, &ev, &zt, &samplers, &targets, &params, rng_seed)?;
            write_plans(&common.out, &loc.plans, &catalog)?;
        }
        Cmd::Simulate {
            plans,
            pop,
            zones,
            network,
            nodes,
            rng_seed,
            common,
        } => {
            let s: SimulationSettings = section(common.config.as_deref(), "simulation")?;
            let zt = read_zones(&zones, &catalog)?;
            let hh = read_population(&pop, Some(&zt.ids()))?.households;
            let plans = read_plans(&plans, &catalog)?;
            let net = pipeline::load_network(&network, nodes.as_deref())?;
            let sim = pipeline::simulate_plans(&net, &zt, &hh, &plans, s.car_share, &s.assignment(rng_seed), &s.corridor)?;
            std::fs::create_dir_all(&common.out).map_err(|e| Error::io(&common.out, e))?;
            pipeline::write_simulation(&common.out, &net, &sim)?;
            log::info!("relative gap per iteration: {:?}", sim.assignment.gap_history);
        }
        Cmd::Validate { generated, reference, common } => {
            let vc: ValidationConfig = section(common.config.as_deref(), "validation")?;
            let report = validate_dirs(&generated, &reference, &catalog, &vc)?;
            report.write(&common.out)?;
        }
        Cmd::Pipeline {
            config,
            out,
            rng_seed,
            stage,
        } => {
            let mut cfg = PipelineConfig::load(&config)?;
            if let Some(o) = out {
                cfg.paths.out_dir = o;
            }
            if let Some(k) = rng_seed {
                let s = &mut cfg.seeds;
                for v in [&mut s.popsynth, &mut s.seed_chain, &mut s.train, &mut s.generate, &mut s.location, &mut s.assignment] {
                    *v = k;
                }
            }
            let p = Pipeline::new(cfg)?;
            match stage {
                Some(name) => {
                    let st = Stage::parse(&name).ok_or_else(|| Error::Config(format!("unknown stage {name}")))?;
                    std::fs::create_dir_all(&p.cfg.paths.out_dir).map_err(|e| Error::io(&p.cfg.paths.out_dir, e))?;
                    p.run_stage(st)?;
                }
                None => {
                    let s = p.run()?;
                    for r in &s.stages {
                        log::info!("{}: {}", r.stage.name(), if r.executed { "ran" } else { "up to date" });
                    }
                    println!("{}", s.out_dir.display());
                }
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
