//! Queue-based mesoscopic traffic simulation.

pub mod assign;
pub mod network;
pub mod sim;

pub use assign::{init_modes, iterate_assignment, relative_gap, summarize, trips_from_plans, Assignment, AssignmentSettings, Mode, Summary, Trip};
pub use network::{read_network, read_nodes, Link, Network};
pub use sim::{route, simulate_day, Conservation, LinkInterval, NetworkState, SimOutput, TravelTimes, Vehicle, INTERVAL};
