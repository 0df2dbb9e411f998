//! The toy study area: 4 zones, a 6-link network and a small synthetic corpus.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::io::{create_writer, write_population};
use crate::location::{write_zones, Zone, ZoneTable};
use crate::mesosim::network::{write_network, write_nodes};
use crate::mesosim::{Link, Network};
use crate::schedule::ActivityCatalog;
use crate::synthetic::{generate_synthetic_corpus, write_corpus, SyntheticRuleSet};

pub const CONFIG_FILE: &str = "config.toml";

pub fn toy_zones() -> ZoneTable {
    ZoneTable::new(vec![
        Zone::new(1, 0.0, 0.0, &["residential", "commercial"]),
        Zone::new(2, 3000.0, 0.0, &["residential", "employment", "commercial"]),
        Zone::new(3, 3000.0, 3000.0, &["residential", "education", "recreation"]),
        Zone::new(4, 0.0, 3000.0, &["residential", "employment", "commercial", "recreation", "education"]),
    ])
    .expect("toy zones are valid")
}

/// A one-way ring 1→2→3→4→1 plus a return link 2→1 and a two-lane diagonal 1→3.
pub fn toy_network() -> Network {
    let arterial = |id, from, to| Link::new(id, from, to, 3900.0, 13.9, 900.0, 1);
    let mut net = Network::new(vec![
        arterial(1, 1, 2),
        arterial(2, 2, 3),
        arterial(3, 3, 4),
        arterial(4, 4, 1),
        Link::new(5, 2, 1, 3900.0, 11.1, 600.0, 1),
        Link::new(6, 1, 3, 5500.0, 16.7, 1200.0, 2),
    ])
    .expect("toy network is valid");
    let coords = toy_zones().zones.iter().map(|z| (z.taz_id, (z.x, z.y))).collect();
    net.set_coordinates(coords).expect("every node has a zone");
    net
}

/// Writes the toy inputs and a config into `dir`, returning the config path.
pub fn write_toy_fixture(dir: &Path, n_households: usize) -> Result<PathBuf> {
    let catalog = ActivityCatalog::default();
    fs::create_dir_all(dir.join("corpus")).map_err(|e| Error::io(dir, e))?;
    let rules = SyntheticRuleSet {
        zones: vec![1, 2, 3, 4],
        ..SyntheticRuleSet::default()
    };
    let corpus = generate_synthetic_corpus(&rules, 200, 17)?;
    write_corpus(&dir.join("corpus"), &corpus, &catalog)?;
    write_population(&dir.join("seed.csv"), &corpus.households, None)?;

    let mut sizes = [0.0; 4];
    for h in &corpus.households {
        sizes[(h.size() - 1).min(3)] += 1.0;
    }
    let total: f64 = sizes.iter().sum();
    let per_zone = n_households as f64 / 4.0;
    let path = dir.join("marginals.csv");
    let mut w = create_writer(&path)?;
    w.write_record(["zone", "dimension", "category", "count"])?;
    for z in 1..=4 {
        for (i, c) in ["1", "2", "3", "4+"].iter().enumerate() {
            w.write_record([z.to_string(), "size".into(), c.to_string(), format!("{:.3}", per_zone * sizes[i] / total)])?;
        }
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    write_zones(&dir.join("zones.csv"), &toy_zones(), &catalog)?;
    let net = toy_network();
    write_network(&dir.join("network.csv"), &net)?;
    write_nodes(&dir.join("nodes.csv"), &net)?;

    let config = format!(
        r#"[paths]
out_dir = "out"
corpus = "corpus"
seed_sample = "seed.csv"
marginals = "marginals.csv"
zones = "zones.csv"
network = "network.csv"
nodes = "nodes.csv"

[seeds]
popsynth = 101
seed_chain = 102
train = 103
generate = 104
location = 105
assignment = 106

[population]
n_households = {n_households}

[model]
embed_dim = 8
n_heads = 2
n_encoder_layers = 1
n_decoder_layers = 1
ffn_dim = 16

[training]
epochs = 2
batch_size = 16
learning_rate = 0.003

[simulation]
iterations = 5
corridor = [1, 6]
"#);
    let cfg = dir.join(CONFIG_FILE);
    fs::write(&cfg, config).map_err(|e| Error::io(&cfg, e))?;
    Ok(cfg)
}
