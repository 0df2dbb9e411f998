//! Declarative pipeline configuration read from TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::coordination::EventOptions;
use crate::error::{Error, Result};
use crate::io::content_hash;
use crate::location::LocationParams;
use crate::mesosim::AssignmentSettings;
use crate::net::{ModelConfig, TrainSettings};
use crate::popsynth::{DEFAULT_MAX_ITER, DEFAULT_TOL};
use crate::validate::ValidationConfig;

/// Input and output locations. Relative paths resolve against the config file's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub out_dir: PathBuf,
    /// Training corpus directory holding `households.csv` and `activities.csv`.
    pub corpus: PathBuf,
    pub seed_sample: PathBuf,
    pub zones: PathBuf,
    pub network: PathBuf,
    /// Without marginals the seed sample is drawn by its own weights.
    #[serde(default)]
    pub marginals: Option<PathBuf>,
    #[serde(default)]
    pub nodes: Option<PathBuf>,
    /// A trained checkpoint; training is skipped when given.
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
    #[serde(default)]
    pub samplers: Option<PathBuf>,
    #[serde(default)]
    pub targets: Option<PathBuf>,
    /// Reference artifact directory for validation; defaults to the corpus.
    #[serde(default)]
    pub reference: Option<PathBuf>,
}

/// One seed per stage. None of these has a default.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    pub popsynth: u64,
    pub seed_chain: u64,
    pub train: u64,
    pub generate: u64,
    pub location: u64,
    pub assignment: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PopulationSettings {
    pub n_households: usize,
    pub ipf_tol: f64,
    pub ipf_max_iter: usize,
}

impl Default for PopulationSettings {
    fn default() -> Self {
        Self {
            n_households: 1000,
            ipf_tol: DEFAULT_TOL,
            ipf_max_iter: DEFAULT_MAX_ITER,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationSettings {
    pub temperature: f64,
    pub seed_temperature: f64,
    /// Laplace smoothing of the seed-chain model.
    pub smoothing: f64,
}

impl Default for GenerationSettings {
    fn default() -> Self {
        Self {
            temperature: 1.0,
            seed_temperature: 1.0,
            smoothing: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationSettings {
    pub iterations: usize,
    pub reroute_fraction: f64,
    pub switch_margin: f64,
    /// Share of trips by licensed members of households with vehicles that drive.
    pub car_share: f64,
    /// Links reported in the corridor table.
    pub corridor: Vec<u32>,
}

impl Default for SimulationSettings {
    fn default() -> Self {
        let a = AssignmentSettings::default();
        Self {
            iterations: a.iterations,
            reroute_fraction: a.reroute_fraction,
            switch_margin: a.switch_margin,
            car_share: 0.8,
            corridor: Vec::new(),
        }
    }
}

impl SimulationSettings {
    pub fn assignment(&self, seed: u64) -> AssignmentSettings {
        AssignmentSettings {
            iterations: self.iterations,
            reroute_fraction: self.reroute_fraction,
            switch_margin: self.switch_margin,
            seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub paths: Paths,
    pub seeds: Seeds,
    #[serde(default)]
    pub population: PopulationSettings,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub training: TrainSettings,
    #[serde(default)]
    pub generation: GenerationSettings,
    #[serde(default)]
    pub events: EventOptions,
    #[serde(default)]
    pub location: LocationParams,
    #[serde(default)]
    pub simulation: SimulationSettings,
    #[serde(default)]
    pub validation: ValidationConfig,
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Parses a config file and resolves its relative paths against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.resolve(base);
        Ok(cfg)
    }

    pub fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        let ps = &mut self.paths;
        for p in [&mut ps.out_dir, &mut ps.corpus, &mut ps.seed_sample, &mut ps.zones, &mut ps.network] {
            fix(p);
        }
        for p in [&mut ps.marginals, &mut ps.nodes, &mut ps.checkpoint, &mut ps.samplers, &mut ps.targets, &mut ps.reference]
            .into_iter()
            .flatten()
        {
            fix(p);
        }
    }

    /// Parameter checks plus existence of every input path.
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.location.validate()?;
        self.validation.validate()?;
        if self.population.n_households == 0 {
            return Err(Error::Config("population.n_households must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.simulation.car_share) || !(0.0..=1.0).contains(&self.simulation.reroute_fraction) {
            return Err(Error::Config("car_share and reroute_fraction must lie in [0, 1]".into()));
        }
        if !(self.generation.temperature >= 0.0 && self.generation.seed_temperature >= 0.0) {
            return Err(Error::Config("temperatures must be >= 0".into()));
        }
        let p = &self.paths;
        let required = [&p.corpus, &p.seed_sample, &p.zones, &p.network];
        let optional = [&p.marginals, &p.nodes, &p.checkpoint, &p.samplers, &p.targets, &p.reference];
        for path in required.into_iter().chain(optional.into_iter().flatten()) {
            if !path.exists() {
                return Err(Error::Config(format!("missing input {}", path.display())));
            }
        }
        Ok(())
    }

    /// Hash of a named section's serialized form, used to key stage artifacts.
    pub fn section_hash<T: Serialize>(section: &T) -> String {
        content_hash(serde_json::to_string(section).expect("config serializes").as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[paths]
out_dir = "out"
corpus = "corpus"
seed_sample = "seed.csv"
zones = "zones.csv"
network = "network.csv"

[seeds]
popsynth = 1
seed_chain = 2
train = 3
generate = 4
location = 5
assignment = 6
"#;

    #[test]
    fn minimal_config_parses_with_defaults() {
        let mut c = PipelineConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(c.seeds.location, 5);
        assert_eq!(c.model, ModelConfig::default());
        c.resolve(Path::new("/base"));
        assert_eq!(c.paths.zones, PathBuf::from("/base/zones.csv"));
    }

    #[test]
    fn seeds_are_mandatory() {
        let text = MINIMAL.replace("assignment = 6\n", "");
        assert!(matches!(PipelineConfig::from_toml(&text), Err(Error::Config(_))));
    }

    #[test]
    fn missing_network_is_named() {
        let dir = tempfile::tempdir().unwrap();
        for f in ["seed.csv", "zones.csv"] {
            std::fs::write(dir.path().join(f), "").unwrap();
        }
        std::fs::create_dir(dir.path().join("corpus")).unwrap();
        let mut c = PipelineConfig::from_toml(MINIMAL).unwrap();
        c.resolve(dir.path());
        let e = c.validate().unwrap_err().to_string();
        assert!(e.contains("network.csv"), "{e}");
    }
}
