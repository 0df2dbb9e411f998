pub mod config;
pub mod coordination;
pub mod error;
pub mod fixtures;
pub mod io;
pub mod location;
pub mod mesosim;
pub mod metrics;
pub mod net;
pub mod pipeline;
pub mod popsynth;
pub mod schedule;
pub mod synthetic;
pub mod validate;

pub use error::{Error, Result};
