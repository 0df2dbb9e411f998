use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::network::Network;
use super::sim::{route, simulate_day, SimOutput, TravelTimes, Vehicle, DAY_SECONDS, INTERVAL};
use crate::error::{Error, Result};
use crate::io::{create_writer, open_reader, row_of, Columns};
use crate::location::LocatedActivity;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    Car,
    NonCar,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Car => "car",
            Mode::NonCar => "non-car",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "car" => Some(Mode::Car),
            "non-car" | "noncar" | "non_car" => Some(Mode::NonCar),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trip {
    pub household_id: u64,
    pub person_id: u64,
    pub origin_taz: u32,
    pub dest_taz: u32,
    /// seconds after midnight
    pub departure: u32,
    pub mode: Mode,
}

/// One trip per zone change between consecutive activities of a person, departing when
/// the earlier activity ends. Intrazonal moves are dropped.
pub fn trips_from_plans(plans: &[LocatedActivity]) -> Vec<Trip> {
    let mut by_person: BTreeMap<(u64, u64), Vec<&LocatedActivity>> = BTreeMap::new();
    for p in plans {
        by_person.entry((p.household_id, p.person_id)).or_default().push(p);
    }
    let mut out = Vec::new();
    for ((hid, pid), mut acts) in by_person {
        acts.sort_by_key(|a| a.seq);
        for w in acts.windows(2) {
            let dep = w[0].end * 60;
            if w[0].taz != w[1].taz && dep < DAY_SECONDS {
                out.push(Trip {
                    household_id: hid,
                    person_id: pid,
                    origin_taz: w[0].taz,
                    dest_taz: w[1].taz,
                    departure: dep,
                    mode: Mode::Car,
                });
            }
        }
    }
    out
}

/// Households without vehicles travel non-car; other trips are car with probability `car_share`.
pub fn init_modes(trips: &mut [Trip], vehicles: &HashMap<u64, u32>, car_share: f64, seed: u64) -> Result<()> {
    if !(0.0..=1.0).contains(&car_share) {
        return Err(Error::Config(format!("car share {car_share} outside [0, 1]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for t in trips.iter_mut() {
        let draw: f64 = rng.gen();
        t.mode = if vehicles.get(&t.household_id).copied().unwrap_or(0) == 0 || draw >= car_share {
            Mode::NonCar
        } else {
            Mode::Car
        };
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AssignmentSettings {
    pub iterations: usize,
    pub reroute_fraction: f64,
    /// Relative improvement a new path needs before a trip switches to it.
    pub switch_margin: f64,
    pub seed: u64,
}

impl Default for AssignmentSettings {
    fn default() -> Self {
        Self {
            iterations: 20,
            reroute_fraction: 0.1,
            switch_margin: 0.1,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Assignment {
    pub output: SimOutput,
    pub vehicles: Vec<Vehicle>,
    /// Trip index of each vehicle.
    pub vehicle_trip: Vec<usize>,
    /// Mean experienced over shortest travel time, minus one, per iteration.
    pub gap_history: Vec<f64>,
    pub unroutable: usize,
}

/// Mean ratio of experienced to shortest time under the experienced costs, minus one.
pub fn relative_gap(net: &Network, vehicles: &[Vehicle], out: &SimOutput) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for (v, r) in vehicles.iter().zip(&out.vehicles) {
        let (Some(exp), Some(&first)) = (r.experienced(v.departure), v.links.first()) else { continue };
        let from = net.links[first].from;
        let to = net.links[*v.links.last().unwrap()].to;
        let Ok(best) = route(net, from, to, v.departure as f64, &out.travel_times) else { continue };
        let shortest = out.travel_times.path_time(&best, v.departure as f64);
        if shortest > 0.0 {
            sum += exp as f64 / shortest;
            n += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64 - 1.0
    }
}

/// Routes car trips on free-flow times, then alternately simulates and re-routes a random
/// `reroute_fraction` of them against the last experienced interval times. A re-routed
/// trip keeps its path unless the new one is faster by more than `switch_margin`.
pub fn iterate_assignment(net: &Network, trips: &[Trip], zone_nodes: &BTreeMap<u32, u32>, settings: &AssignmentSettings) -> Result<Assignment> {
    if settings.iterations == 0 {
        return Err(Error::Config("assignment needs at least one iteration".into()));
    }
    if !(0.0..=1.0).contains(&settings.reroute_fraction) {
        return Err(Error::Config("reroute fraction must be in [0, 1]".into()));
    }
    let node = |taz: u32| zone_nodes.get(&taz).copied().ok_or_else(|| Error::Config(format!("zone {taz} has no network node")));
    let free = TravelTimes::free_flow(net);
    let mut vehicles = Vec::new();
    let mut vehicle_trip = Vec::new();
    let mut unroutable = 0;
    for (i, t) in trips.iter().enumerate() {
        if t.mode != Mode::Car {
            continue;
        }
        let (a, b) = (node(t.origin_taz)?, node(t.dest_taz)?);
        if a == b {
            continue;
        }
        match route(net, a, b, t.departure as f64, &free) {
            Ok(links) => {
                vehicles.push(Vehicle { departure: t.departure, links });
                vehicle_trip.push(i);
            }
            Err(Error::Unroutable { from, to }) => {
                log::debug!("trip {i} unroutable from node {from} to {to}");
                unroutable += 1;
            }
            Err(e) => return Err(e),
        }
    }
    if unroutable > 0 {
        log::warn!("{unroutable} car trips dropped as unroutable");
    }
    let mut output = simulate_day(net, &vehicles)?;
    let mut gap_history = vec![relative_gap(net, &vehicles, &output)];
    for it in 1..settings.iterations {
        let k = (settings.reroute_fraction * vehicles.len() as f64).round() as usize;
        if k > 0 {
            let mut rng = ChaCha8Rng::seed_from_u64(settings.seed ^ (it as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
            let mut chosen = sample(&mut rng, vehicles.len(), k).into_vec();
            chosen.sort_unstable();
            for v in chosen {
                let veh = &vehicles[v];
                let from = net.links[veh.links[0]].from;
                let to = net.links[*veh.links.last().unwrap()].to;
                let tt = &output.travel_times;
                let links = route(net, from, to, veh.departure as f64, tt)?;
                let dep = veh.departure as f64;
                if tt.path_time(&links, dep) < (1.0 - settings.switch_margin) * tt.path_time(&veh.links, dep) {
                    vehicles[v].links = links;
                }
            }
        }
        output = simulate_day(net, &vehicles)?;
        gap_history.push(relative_gap(net, &vehicles, &output));
    }
    Ok(Assignment {
        output,
        vehicles,
        vehicle_trip,
        gap_history,
        unroutable,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorridorRow {
    pub link_id: u32,
    pub interval: usize,
    pub volume: u32,
    pub mean_speed: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    /// Vehicle-km per interval.
    pub vmt: Vec<f64>,
    /// Trip counts keyed by (origin, destination) zone, all modes.
    pub od: BTreeMap<(u32, u32), u64>,
    pub corridor: Vec<CorridorRow>,
}

pub fn summarize(out: &SimOutput, net: &Network, trips: &[Trip], corridor: &[u32]) -> Result<Summary> {
    let n = out.state.n_intervals();
    let mut vmt = vec![0.0; n];
    for (l, row) in net.links.iter().zip(&out.state.links) {
        for (k, s) in row.iter().enumerate() {
            vmt[k] += s.volume as f64 * l.length / 1000.0;
        }
    }
    let mut od = BTreeMap::new();
    for t in trips {
        *od.entry((t.origin_taz, t.dest_taz)).or_insert(0) += 1;
    }
    let mut rows = Vec::new();
    for &id in corridor {
        let i = net.index_of(id).ok_or_else(|| Error::Config(format!("corridor link {id} not in network")))?;
        for (k, s) in out.state.links[i].iter().enumerate() {
            rows.push(CorridorRow {
                link_id: id,
                interval: k,
                volume: s.volume,
                mean_speed: s.mean_speed,
            });
        }
    }
    Ok(Summary { vmt, od, corridor: rows })
}

fn flush(w: &mut csv::Writer<std::fs::File>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_link_stats(path: &Path, out: &SimOutput, net: &Network) -> Result<()> {
    let mut w = create_writer(path)?;
    w.write_record(["link_id", "interval", "start_s", "volume", "entered", "mean_speed_ms", "queue", "occupancy"])?;
    for (l, row) in net.links.iter().zip(&out.state.links) {
        for (k, s) in row.iter().enumerate() {
            w.write_record([
                l.link_id.to_string(),
                k.to_string(),
                (k as u32 * INTERVAL).to_string(),
                s.volume.to_string(),
                s.entered.to_string(),
                format!("{:.6}", s.mean_speed),
                s.queue.to_string(),
                s.occupancy.to_string(),
            ])?;
        }
    }
    flush(&mut w, path)
}

pub fn write_vmt(path: &Path, s: &Summary) -> Result<()> {
    let mut w = create_writer(path)?;
    w.write_record(["interval", "start_s", "vehicle_km"])?;
    for (k, v) in s.vmt.iter().enumerate() {
        w.write_record([k.to_string(), (k as u32 * INTERVAL).to_string(), format!("{v:.6}")])?;
    }
    flush(&mut w, path)
}

pub fn write_od(path: &Path, s: &Summary) -> Result<()> {
    let mut w = create_writer(path)?;
    w.write_record(["origin_taz", "dest_taz", "trips"])?;
    for ((o, d), n) in &s.od {
        w.write_record([o.to_string(), d.to_string(), n.to_string()])?;
    }
    flush(&mut w, path)
}

pub fn read_od(path: &Path) -> Result<BTreeMap<(u32, u32), u64>> {
    let mut rdr = open_reader(path)?;
    let cols = Columns::new(rdr.headers()?, &["origin_taz", "dest_taz", "trips"], path)?;
    let mut m = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let row = row_of(&rec);
        m.insert((cols.parse(&rec, "origin_taz", row)?, cols.parse(&rec, "dest_taz", row)?), cols.parse(&rec, "trips", row)?);
    }
    Ok(m)
}

pub fn write_trips(path: &Path, trips: &[Trip], a: &Assignment) -> Result<()> {
    let mut result: HashMap<usize, Option<u32>> = HashMap::new();
    for (v, &t) in a.vehicle_trip.iter().enumerate() {
        result.insert(t, a.output.vehicles[v].arrival);
    }
    let mut w = create_writer(path)?;
    w.write_record(["trip_id", "household_id", "person_id", "origin_taz", "dest_taz", "departure_s", "mode", "arrival_s"])?;
    for (i, t) in trips.iter().enumerate() {
        let arrival = result.get(&i).copied().flatten().map_or(String::new(), |a| a.to_string());
        w.write_record([
            i.to_string(),
            t.household_id.to_string(),
            t.person_id.to_string(),
            t.origin_taz.to_string(),
            t.dest_taz.to_string(),
            t.departure.to_string(),
            t.mode.as_str().to_string(),
            arrival,
        ])?;
    }
    flush(&mut w, path)
}

pub fn write_gaps(path: &Path, gaps: &[f64]) -> Result<()> {
    let mut w = create_writer(path)?;
    w.write_record(["iteration", "relative_gap"])?;
    for (i, g) in gaps.iter().enumerate() {
        w.write_record([(i + 1).to_string(), format!("{g:.9}")])?;
    }
    flush(&mut w, path)
}

pub fn write_corridor(path: &Path, rows: &[CorridorRow]) -> Result<()> {
    let mut w = create_writer(path)?;
    w.write_record(["link_id", "interval", "volume", "mean_speed_ms"])?;
    for r in rows {
        w.write_record([r.link_id.to_string(), r.interval.to_string(), r.volume.to_string(), format!("{:.6}", r.mean_speed)])?;
    }
    flush(&mut w, path)
}

pub fn read_corridor(path: &Path) -> Result<Vec<CorridorRow>> {
    let mut rdr = open_reader(path)?;
    let cols = Columns::new(rdr.headers()?, &["link_id", "interval", "volume", "mean_speed_ms"], path)?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let row = row_of(&rec);
        out.push(CorridorRow {
            link_id: cols.parse(&rec, "link_id", row)?,
            interval: cols.parse(&rec, "interval", row)?,
            volume: cols.parse(&rec, "volume", row)?,
            mean_speed: cols.parse(&rec, "mean_speed_ms", row)?,
        });
    }
    Ok(out)
}

pub fn read_vmt(path: &Path) -> Result<Vec<f64>> {
    let mut rdr = open_reader(path)?;
    let cols = Columns::new(rdr.headers()?, &["interval", "vehicle_km"], path)?;
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let row = row_of(&rec);
        rows.push((cols.parse::<usize>(&rec, "interval", row)?, cols.parse::<f64>(&rec, "vehicle_km", row)?));
    }
    rows.sort_by_key(|r| r.0);
    Ok(rows.into_iter().map(|r| r.1).collect())
}
