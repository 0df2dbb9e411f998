use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{create_writer, open_reader, row_of, Columns};
use crate::location::ZoneTable;

/// Meters of jam spacing per stored vehicle.
pub const VEHICLE_SPACING: f64 = 7.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Link {
    pub link_id: u32,
    pub from: u32,
    pub to: u32,
    /// meters
    pub length: f64,
    /// m/s
    pub free_speed: f64,
    /// vehicles/hour
    pub capacity: f64,
    pub lanes: u32,
}

impl Link {
    pub fn new(link_id: u32, from: u32, to: u32, length: f64, free_speed: f64, capacity: f64, lanes: u32) -> Self {
        Self {
            link_id,
            from,
            to,
            length,
            free_speed,
            capacity,
            lanes,
        }
    }

    pub fn storage(&self) -> usize {
        ((self.lanes as f64 * self.length / VEHICLE_SPACING).floor() as usize).max(1)
    }

    /// Free-flow traversal, seconds.
    pub fn free_time(&self) -> f64 {
        self.length / self.free_speed
    }

    /// Whole seconds between entering and becoming eligible to exit.
    pub fn min_steps(&self) -> u32 {
        (self.free_time() - 1e-9).ceil().max(1.0) as u32
    }
}

/// Links sorted by id with node adjacency.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    pub links: Vec<Link>,
    pub nodes: BTreeMap<u32, Option<(f64, f64)>>,
    out: HashMap<u32, Vec<usize>>,
}

impl Network {
    pub fn new(mut links: Vec<Link>) -> Result<Self> {
        links.sort_by_key(|l| l.link_id);
        for w in links.windows(2) {
            if w[0].link_id == w[1].link_id {
                return Err(Error::Config(format!("duplicate link {}", w[0].link_id)));
            }
        }
        let mut nodes = BTreeMap::new();
        let mut out: HashMap<u32, Vec<usize>> = HashMap::new();
        for (i, l) in links.iter().enumerate() {
            if !(l.length > 0.0 && l.free_speed > 0.0 && l.capacity > 0.0 && l.lanes > 0) {
                return Err(Error::Config(format!("link {} needs positive length, speed, capacity and lanes", l.link_id)));
            }
            nodes.insert(l.from, None);
            nodes.insert(l.to, None);
            out.entry(l.from).or_default().push(i);
        }
        Ok(Self { links, nodes, out })
    }

    pub fn outgoing(&self, node: u32) -> &[usize] {
        self.out.get(&node).map_or(&[], Vec::as_slice)
    }

    pub fn index_of(&self, link_id: u32) -> Option<usize> {
        self.links.binary_search_by_key(&link_id, |l| l.link_id).ok()
    }

    pub fn set_coordinates(&mut self, coords: BTreeMap<u32, (f64, f64)>) -> Result<()> {
        for (n, c) in self.nodes.iter_mut() {
            *c = Some(*coords.get(n).ok_or_else(|| Error::Config(format!("node {n} has no coordinates")))?);
        }
        Ok(())
    }

    /// Maps each zone to its nearest node (ties to lower id), or to the node with the
    /// same id when the network has no coordinates.
    pub fn zone_nodes(&self, zones: &ZoneTable) -> Result<BTreeMap<u32, u32>> {
        let mut m = BTreeMap::new();
        let has_coords = self.nodes.values().all(Option::is_some);
        for z in &zones.zones {
            let node = if has_coords && !self.nodes.is_empty() {
                *self
                    .nodes
                    .iter()
                    .map(|(id, c)| {
                        let (x, y) = c.unwrap();
                        ((x - z.x).hypot(y - z.y), id)
                    })
                    .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(b.1)))
                    .unwrap()
                    .1
            } else if self.nodes.contains_key(&z.taz_id) {
                z.taz_id
            } else {
                return Err(Error::Config(format!("zone {} has no network node; supply node coordinates", z.taz_id)));
            };
            m.insert(z.taz_id, node);
        }
        Ok(m)
    }
}

pub const NETWORK_HEADER: [&str; 7] = ["link_id", "from", "to", "length_m", "free_speed_ms", "capacity_vph", "lanes"];

pub fn read_network(path: &Path) -> Result<Network> {
    let mut rdr = open_reader(path)?;
    let cols = Columns::new(rdr.headers()?, &NETWORK_HEADER, path)?;
    let mut links = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let row = row_of(&rec);
        let l = Link {
            link_id: cols.parse(&rec, "link_id", row)?,
            from: cols.parse(&rec, "from", row)?,
            to: cols.parse(&rec, "to", row)?,
            length: cols.parse(&rec, "length_m", row)?,
            free_speed: cols.parse(&rec, "free_speed_ms", row)?,
            capacity: cols.parse(&rec, "capacity_vph", row)?,
            lanes: cols.parse(&rec, "lanes", row)?,
        };
        if !(l.length > 0.0 && l.free_speed > 0.0 && l.capacity > 0.0) {
            return Err(Error::invariant(&path.display().to_string(), row, "length, free speed and capacity must be positive"));
        }
        links.push(l);
    }
    Network::new(links)
}

/// Reads `node_id, x, y`.
pub fn read_nodes(path: &Path) -> Result<BTreeMap<u32, (f64, f64)>> {
    let mut rdr = open_reader(path)?;
    let cols = Columns::new(rdr.headers()?, &["node_id", "x", "y"], path)?;
    let mut m = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let row = row_of(&rec);
        m.insert(cols.parse(&rec, "node_id", row)?, (cols.parse(&rec, "x", row)?, cols.parse(&rec, "y", row)?));
    }
    Ok(m)
}

pub fn write_network(path: &Path, net: &Network) -> Result<()> {
    let mut w = create_writer(path)?;
    w.write_record(NETWORK_HEADER)?;
    for l in &net.links {
        w.write_record([
            l.link_id.to_string(),
            l.from.to_string(),
            l.to.to_string(),
            l.length.to_string(),
            l.free_speed.to_string(),
            l.capacity.to_string(),
            l.lanes.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn write_nodes(path: &Path, net: &Network) -> Result<()> {
    let mut w = create_writer(path)?;
    w.write_record(["node_id", "x", "y"])?;
    for (id, c) in &net.nodes {
        if let Some((x, y)) = c {
            w.write_record([id.to_string(), x.to_string(), y.to_string()])?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}
