use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::batch::FEATURE_DIM;
use super::tensor::Mat;
use crate::error::{Error, Result};
use crate::io;
use crate::schedule::{ActivityCatalog, N_CODES, P_MAX, SLOTS};

/// Architecture and loss hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub n_heads: usize,
    pub n_encoder_layers: usize,
    pub n_decoder_layers: usize,
    pub ffn_dim: usize,
    pub p_max: usize,
    /// Additive diagonal bias of the role-match attention (γ).
    pub diag_bias: f64,
    /// Soft-matching temperature of the role-match attention (τ).
    pub match_temperature: f64,
    pub lambda_aor: f64,
    pub dropout: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            embed_dim: 64,
            n_heads: 4,
            n_encoder_layers: 2,
            n_decoder_layers: 2,
            ffn_dim: 128,
            p_max: P_MAX,
            diag_bias: 2.0,
            match_temperature: 1.0,
            lambda_aor: 0.5,
            dropout: 0.0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("model config: {m}")));
        if self.embed_dim == 0 || self.n_heads == 0 || self.embed_dim % self.n_heads != 0 {
            return bad("embed_dim must be a positive multiple of n_heads");
        }
        if self.p_max == 0 || self.p_max > P_MAX {
            return bad("p_max out of range");
        }
        if !(self.diag_bias >= 0.0) {
            return bad("diag_bias must be >= 0");
        }
        if !(self.match_temperature > 0.0) {
            return bad("match_temperature must be > 0");
        }
        if !(self.lambda_aor >= 0.0) {
            return bad("lambda_aor must be >= 0");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must be in [0, 1)");
        }
        if self.ffn_dim == 0 {
            return bad("ffn_dim must be positive");
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.n_heads
    }
}

/// Vocabulary rows of the code embedding: 16 codes plus a begin-of-day token.
pub const BOS: usize = N_CODES;

enum Init {
    Xavier,
    Ones,
    Zeros,
    Embedding,
}

fn shapes(c: &ModelConfig) -> Vec<(String, usize, usize, Init)> {
    let e = c.embed_dim;
    let f = c.ffn_dim;
    let mut v = vec![
        ("attr.w".to_string(), FEATURE_DIM, e, Init::Xavier),
        ("attr.b".into(), 1, e, Init::Zeros),
        ("role.queries".into(), c.p_max, e, Init::Embedding),
        ("role.wv".into(), e, e, Init::Xavier),
        ("role.bv".into(), 1, e, Init::Zeros),
        ("code_emb".into(), N_CODES + 1, e, Init::Embedding),
        ("time_emb".into(), SLOTS, e, Init::Embedding),
        ("ctx.w".into(), e, e, Init::Xavier),
        ("ctx.b".into(), 1, e, Init::Zeros),
        ("mem.ln.g".into(), 1, e, Init::Ones),
        ("mem.ln.b".into(), 1, e, Init::Zeros),
        ("out.ln.g".into(), 1, e, Init::Ones),
        ("out.ln.b".into(), 1, e, Init::Zeros),
        ("out.fc1.w".into(), 2 * e, f, Init::Xavier),
        ("out.fc1.b".into(), 1, f, Init::Zeros),
        ("out.fc2.w".into(), f, N_CODES, Init::Xavier),
        ("out.fc2.b".into(), 1, N_CODES, Init::Zeros),
    ];
    let block = |v: &mut Vec<(String, usize, usize, Init)>, prefix: String| {
        v.push((format!("{prefix}.ln.g"), 1, e, Init::Ones));
        v.push((format!("{prefix}.ln.b"), 1, e, Init::Zeros));
        for w in ["wq", "wk", "wv", "wo"] {
            v.push((format!("{prefix}.{w}"), e, e, Init::Xavier));
        }
    };
    let ffn = |v: &mut Vec<(String, usize, usize, Init)>, prefix: String| {
        v.push((format!("{prefix}.ln.g"), 1, e, Init::Ones));
        v.push((format!("{prefix}.ln.b"), 1, e, Init::Zeros));
        v.push((format!("{prefix}.w1"), e, f, Init::Xavier));
        v.push((format!("{prefix}.b1"), 1, f, Init::Zeros));
        v.push((format!("{prefix}.w2"), f, e, Init::Xavier));
        v.push((format!("{prefix}.b2"), 1, e, Init::Zeros));
    };
    for l in 0..c.n_encoder_layers {
        block(&mut v, format!("enc{l}.attn"));
        ffn(&mut v, format!("enc{l}.ffn"));
    }
    for l in 0..c.n_decoder_layers {
        block(&mut v, format!("dec{l}.time"));
        block(&mut v, format!("dec{l}.person"));
        block(&mut v, format!("dec{l}.cross"));
        ffn(&mut v, format!("dec{l}.ffn"));
    }
    v
}

/// Named parameter tensors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    pub tensors: BTreeMap<String, Mat>,
}

impl ParamStore {
    pub fn init(config: &ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tensors = BTreeMap::new();
        for (name, r, c, init) in shapes(config) {
            let data = match init {
                Init::Ones => vec![1.0; r * c],
                Init::Zeros => vec![0.0; r * c],
                Init::Xavier => {
                    let a = (6.0 / (r + c) as f64).sqrt();
                    (0..r * c).map(|_| rng.gen_range(-a..a)).collect()
                }
                Init::Embedding => (0..r * c).map(|_| rng.gen_range(-0.5..0.5)).collect(),
            };
            tensors.insert(name, Mat::from_vec(r, c, data));
        }
        Self { tensors }
    }

    pub fn get(&self, name: &str) -> &Mat {
        self.tensors
            .get(name)
            .unwrap_or_else(|| panic!("parameter {name} missing"))
    }

    pub fn len(&self) -> usize {
        self.tensors.values().map(|m| m.data.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.values().all(Mat::is_finite)
    }

    /// Checks names and shapes against a config.
    pub fn check_shapes(&self, config: &ModelConfig) -> Result<()> {
        let expected = shapes(config);
        if expected.len() != self.tensors.len() {
            return Err(Error::Config(format!(
                "parameter count {} does not match config ({})",
                self.tensors.len(),
                expected.len()
            )));
        }
        for (name, r, c, _) in expected {
            match self.tensors.get(&name) {
                Some(m) if m.rows == r && m.cols == c && m.data.len() == r * c => {}
                _ => return Err(Error::Config(format!("parameter {name} missing or mis-shaped"))),
            }
        }
        Ok(())
    }
}

/// Hash of everything a checkpoint's tensors are tied to: labels, feature layout, grid shape.
pub fn schema_hash(catalog: &ActivityCatalog) -> String {
    let desc = format!(
        "deepcam/v1|features={FEATURE_DIM}|slots={SLOTS}|codes={N_CODES}|pmax={P_MAX}|labels={}",
        catalog.labels.join(",")
    );
    io::content_hash(desc.as_bytes())
}

/// On-disk model: config, tensors, corpus schema hash and per-activity solo weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub schema_hash: String,
    pub config: ModelConfig,
    pub activity_weights: Vec<f64>,
    pub params: ParamStore,
}

pub const CHECKPOINT_FORMAT: &str = "hhdemand-deepcam-checkpoint/1";

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        io::write_json(path, self)
    }

    /// Loads a checkpoint and refuses it if its schema hash differs from `catalog`'s.
    pub fn load(path: &Path, catalog: &ActivityCatalog) -> Result<Self> {
        let ck: Checkpoint = io::read_json(path)?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::Config(format!("{}: unknown checkpoint format {}", path.display(), ck.format)));
        }
        let expected = schema_hash(catalog);
        if ck.schema_hash != expected {
            return Err(Error::CheckpointMismatch {
                expected,
                found: ck.schema_hash,
            });
        }
        ck.config.validate()?;
        ck.params.check_shapes(&ck.config)?;
        Ok(ck)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_deterministic_and_shaped() {
        let c = ModelConfig::default();
        let a = ParamStore::init(&c, 5);
        assert_eq!(a, ParamStore::init(&c, 5));
        assert_ne!(a, ParamStore::init(&c, 6));
        a.check_shapes(&c).unwrap();
        assert!(a.is_finite());
    }

    #[test]
    fn config_validation() {
        let mut c = ModelConfig::default();
        c.embed_dim = 30;
        assert!(c.validate().is_err());
        let c = ModelConfig {
            match_temperature: 0.0,
            ..ModelConfig::default()
        };
        assert!(c.validate().is_err());
        assert!(ModelConfig::default().validate().is_ok());
    }

    #[test]
    fn checkpoint_round_trip_and_schema_guard() {
        let dir = tempfile::tempdir().unwrap();
        let c = ModelConfig {
            embed_dim: 8,
            n_heads: 2,
            n_encoder_layers: 1,
            n_decoder_layers: 1,
            ffn_dim: 8,
            ..ModelConfig::default()
        };
        let cat = ActivityCatalog::default();
        let ck = Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            schema_hash: schema_hash(&cat),
            config: c.clone(),
            activity_weights: vec![1.0; 15],
            params: ParamStore::init(&c, 1),
        };
        let p = dir.path().join("ck.json");
        ck.save(&p).unwrap();
        assert_eq!(Checkpoint::load(&p, &cat).unwrap(), ck);
        let other = cat.with_extra_labels(["A", "B", "C"]);
        assert!(matches!(Checkpoint::load(&p, &other), Err(Error::CheckpointMismatch { .. })));
    }
}
