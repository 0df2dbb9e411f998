use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use super::network::Network;
use crate::error::{Error, Result};

/// Seconds per reporting interval.
pub const INTERVAL: u32 = 900;
pub const DAY_SECONDS: u32 = 86_400;
/// Seconds without any movement before the queue engine declares gridlock.
pub const GRIDLOCK_SECONDS: u32 = 600;
const TOKEN: f64 = 3600.0;

/// Per-link travel times by entry interval, seconds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TravelTimes {
    pub times: Vec<Vec<f64>>,
}

impl TravelTimes {
    pub fn free_flow(net: &Network) -> Self {
        Self {
            times: net.links.iter().map(|l| vec![l.free_time()]).collect(),
        }
    }

    pub fn at(&self, link: usize, t: f64) -> f64 {
        let row = &self.times[link];
        let k = ((t.max(0.0) / INTERVAL as f64) as usize).min(row.len() - 1);
        row[k]
    }

    pub fn path_time(&self, links: &[usize], depart: f64) -> f64 {
        links.iter().fold(depart, |t, &l| t + self.at(l, t)) - depart
    }
}

#[derive(PartialEq)]
struct Label(f64, u32);
impl Eq for Label {}
impl PartialOrd for Label {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Label {
    fn cmp(&self, o: &Self) -> Ordering {
        self.0.total_cmp(&o.0).then(self.1.cmp(&o.1))
    }
}

/// Time-dependent label-setting shortest path from `from` to `to` departing at `depart`.
/// Equal arrival times prefer the lower incoming link id. Returns link indices.
pub fn route(net: &Network, from: u32, to: u32, depart: f64, tt: &TravelTimes) -> Result<Vec<usize>> {
    if from == to {
        return Ok(Vec::new());
    }
    let mut best: HashMap<u32, (f64, Option<usize>)> = HashMap::new();
    let mut done: HashMap<u32, bool> = HashMap::new();
    let mut heap = BinaryHeap::new();
    best.insert(from, (depart, None));
    heap.push(Reverse(Label(depart, from)));
    while let Some(Reverse(Label(t, node))) = heap.pop() {
        if done.insert(node, true).is_some() {
            continue;
        }
        if node == to {
            break;
        }
        for &li in net.outgoing(node) {
            let l = &net.links[li];
            let arr = t + tt.at(li, t);
            let better = match best.get(&l.to) {
                None => true,
                Some(&(bt, pred)) => arr < bt || (arr == bt && pred.is_some_and(|p| l.link_id < net.links[p].link_id)),
            };
            if better && !done.contains_key(&l.to) {
                best.insert(l.to, (arr, Some(li)));
                heap.push(Reverse(Label(arr, l.to)));
            }
        }
    }
    if !done.contains_key(&to) {
        return Err(Error::Unroutable { from, to });
    }
    let mut path = Vec::new();
    let mut n = to;
    while let Some(&(_, Some(li))) = best.get(&n) {
        path.push(li);
        n = net.links[li].from;
    }
    path.reverse();
    Ok(path)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Vehicle {
    pub departure: u32,
    pub links: Vec<usize>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LinkInterval {
    /// Vehicles that left the link during the interval.
    pub volume: u32,
    pub entered: u32,
    /// m/s; free speed when nothing exited.
    pub mean_speed: f64,
    /// Vehicles eligible to exit but still held at interval end.
    pub queue: u32,
    pub occupancy: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkState {
    /// `[link][interval]`
    pub links: Vec<Vec<LinkInterval>>,
}

impl NetworkState {
    pub fn n_intervals(&self) -> usize {
        self.links.first().map_or(0, Vec::len)
    }
}

/// Network-wide counts at the end of each interval.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conservation {
    pub interval: usize,
    pub departed: u64,
    pub entered: u64,
    pub arrived: u64,
    pub on_network: u64,
    pub waiting: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VehicleResult {
    pub arrival: Option<u32>,
    /// `(entry, exit)` per traversed link.
    pub link_times: Vec<(u32, u32)>,
}

impl VehicleResult {
    pub fn experienced(&self, departure: u32) -> Option<u32> {
        self.arrival.map(|a| a - departure)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimOutput {
    pub state: NetworkState,
    pub vehicles: Vec<VehicleResult>,
    pub conservation: Vec<Conservation>,
    /// Experienced traversal times by entry interval.
    pub travel_times: TravelTimes,
}

struct Engine<'a> {
    net: &'a Network,
    vehicles: &'a [Vehicle],
    queues: Vec<VecDeque<(usize, u32)>>,
    waiting: Vec<VecDeque<usize>>,
    tokens: Vec<f64>,
    pos: Vec<usize>,
    results: Vec<VehicleResult>,
    cur: Vec<LinkInterval>,
    exit_time_sum: Vec<f64>,
    cum_in: Vec<u64>,
    cum_out: Vec<u64>,
    tt_sum: Vec<Vec<(f64, u32)>>,
    state: Vec<Vec<LinkInterval>>,
    conservation: Vec<Conservation>,
    departed: u64,
    entered: u64,
    arrived: u64,
}

impl Engine<'_> {
    fn close_interval(&mut self, t: u32) -> Result<()> {
        let k = self.conservation.len();
        for (i, l) in self.net.links.iter().enumerate() {
            let mut s = self.cur[i];
            s.mean_speed = if s.volume > 0 {
                (l.length / (self.exit_time_sum[i] / s.volume as f64)).min(l.free_speed)
            } else {
                l.free_speed
            };
            s.occupancy = self.queues[i].len() as u32;
            s.queue = self.queues[i].iter().filter(|(_, e)| e + l.min_steps() <= t).count() as u32;
            if self.cum_in[i] != self.cum_out[i] + s.occupancy as u64 {
                return Err(Error::Invariant {
                    path: "simulation".into(),
                    row: k as u64,
                    message: format!("flow not conserved on link {}", l.link_id),
                });
            }
            self.state[i].push(s);
            self.cur[i] = LinkInterval::default();
            self.exit_time_sum[i] = 0.0;
        }
        let on_network: u64 = self.queues.iter().map(|q| q.len() as u64).sum();
        let waiting: u64 = self.waiting.iter().map(|q| q.len() as u64).sum();
        if self.entered != self.arrived + on_network || self.departed != self.entered + waiting {
            return Err(Error::Invariant {
                path: "simulation".into(),
                row: k as u64,
                message: "network-wide flow not conserved".into(),
            });
        }
        self.conservation.push(Conservation {
            interval: k,
            departed: self.departed,
            entered: self.entered,
            arrived: self.arrived,
            on_network,
            waiting,
        });
        Ok(())
    }

    fn enter(&mut self, v: usize, link: usize, t: u32) {
        self.queues[link].push_back((v, t));
        self.cur[link].entered += 1;
        self.cum_in[link] += 1;
        self.results[v].link_times.push((t, t));
    }

    /// One second of link dynamics; returns whether any vehicle moved.
    fn step(&mut self, t: u32) -> bool {
        let mut moved = false;
        for i in 0..self.net.links.len() {
            let min = self.net.links[i].min_steps();
            while let Some(&(v, entry)) = self.queues[i].front() {
                if entry + min > t || self.tokens[i] < TOKEN {
                    break;
                }
                let next = self.vehicles[v].links.get(self.pos[v] + 1).copied();
                if let Some(n) = next {
                    if self.queues[n].len() >= self.net.links[n].storage() {
                        break;
                    }
                }
                self.queues[i].pop_front();
                self.tokens[i] -= TOKEN;
                self.cum_out[i] += 1;
                self.cur[i].volume += 1;
                let dt = (t - entry) as f64;
                self.exit_time_sum[i] += dt;
                let k = (entry / INTERVAL) as usize;
                if self.tt_sum[i].len() <= k {
                    self.tt_sum[i].resize(k + 1, (0.0, 0));
                }
                self.tt_sum[i][k].0 += dt;
                self.tt_sum[i][k].1 += 1;
                self.results[v].link_times.last_mut().unwrap().1 = t;
                moved = true;
                match next {
                    Some(n) => {
                        self.pos[v] += 1;
                        self.enter(v, n, t);
                    }
                    None => {
                        self.results[v].arrival = Some(t);
                        self.arrived += 1;
                    }
                }
            }
        }
        for i in 0..self.net.links.len() {
            while !self.waiting[i].is_empty() && self.queues[i].len() < self.net.links[i].storage() {
                let v = self.waiting[i].pop_front().unwrap();
                self.entered += 1;
                self.enter(v, i, t);
                moved = true;
            }
        }
        for (i, l) in self.net.links.iter().enumerate() {
            self.tokens[i] = (self.tokens[i] + l.capacity).min(l.capacity.max(TOKEN));
        }
        moved
    }

    fn present(&self) -> bool {
        self.queues.iter().any(|q| !q.is_empty()) || self.waiting.iter().any(|q| !q.is_empty())
    }

    fn all_held(&self, t: u32) -> bool {
        self.queues
            .iter()
            .zip(&self.net.links)
            .all(|(q, l)| q.iter().all(|(_, e)| e + l.min_steps() <= t))
    }
}

/// Runs the point-queue-with-storage engine at one-second resolution until every vehicle
/// arrives or two days elapse. Vehicles with empty routes are ignored.
pub fn simulate_day(net: &Network, vehicles: &[Vehicle]) -> Result<SimOutput> {
    let n_links = net.links.len();
    let mut order: Vec<usize> = (0..vehicles.len()).filter(|&v| !vehicles[v].links.is_empty()).collect();
    order.sort_by_key(|&v| (vehicles[v].departure, v));
    let mut eng = Engine {
        net,
        vehicles,
        queues: vec![VecDeque::new(); n_links],
        waiting: vec![VecDeque::new(); n_links],
        tokens: net.links.iter().map(|l| l.capacity.max(TOKEN)).collect(),
        pos: vec![0; vehicles.len()],
        results: vec![
            VehicleResult {
                arrival: None,
                link_times: Vec::new()
            };
            vehicles.len()
        ],
        cur: vec![LinkInterval::default(); n_links],
        exit_time_sum: vec![0.0; n_links],
        cum_in: vec![0; n_links],
        cum_out: vec![0; n_links],
        tt_sum: vec![Vec::new(); n_links],
        state: vec![Vec::new(); n_links],
        conservation: Vec::new(),
        departed: 0,
        entered: 0,
        arrived: 0,
    };
    let horizon = 2 * DAY_SECONDS;
    let mut next = 0;
    let mut t = 0;
    let mut stall = 0;
    while t < horizon {
        if next >= order.len() && !eng.present() {
            break;
        }
        if !eng.present() && vehicles[order[next]].departure > t {
            // Idle network: jump to the next departure.
            let to = vehicles[order[next]].departure.min(horizon);
            while (eng.conservation.len() as u32 + 1) * INTERVAL <= to {
                let end = (eng.conservation.len() as u32 + 1) * INTERVAL;
                eng.close_interval(end)?;
            }
            for (i, l) in net.links.iter().enumerate() {
                eng.tokens[i] = l.capacity.max(TOKEN);
            }
            t = to;
            stall = 0;
            continue;
        }
        while next < order.len() && vehicles[order[next]].departure == t {
            let v = order[next];
            eng.waiting[vehicles[v].links[0]].push_back(v);
            eng.departed += 1;
            next += 1;
        }
        if eng.step(t) {
            stall = 0;
        } else if eng.present() {
            stall += 1;
            if stall >= GRIDLOCK_SECONDS && eng.all_held(t) {
                let held: Vec<u32> = (0..n_links).filter(|&i| !eng.queues[i].is_empty()).map(|i| net.links[i].link_id).collect();
                return Err(Error::Gridlock {
                    time: t,
                    detail: format!("{} vehicles held on links {:?}", eng.queues.iter().map(VecDeque::len).sum::<usize>(), held),
                });
            }
        }
        t += 1;
        if t % INTERVAL == 0 {
            eng.close_interval(t)?;
        }
    }
    let min_intervals = (DAY_SECONDS / INTERVAL) as usize;
    while eng.conservation.len() < min_intervals || (eng.conservation.len() as u32) * INTERVAL < t {
        let end = (eng.conservation.len() as u32 + 1) * INTERVAL;
        eng.close_interval(end)?;
    }
    let n_intervals = eng.conservation.len();
    let times = net
        .links
        .iter()
        .zip(&eng.tt_sum)
        .map(|(l, sums)| {
            let mut row: Vec<f64> = sums.iter().map(|&(s, n)| if n > 0 { s / n as f64 } else { l.free_time() }).collect();
            row.resize(n_intervals.max(row.len()), l.free_time());
            row
        })
        .collect();
    Ok(SimOutput {
        state: NetworkState { links: eng.state },
        vehicles: eng.results,
        conservation: eng.conservation,
        travel_times: TravelTimes { times },
    })
}
