use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("ill-formed activity chain for person {person_id}: {reason}")]
    IllFormedChain { person_id: u64, reason: String },

    #[error("row contains PAD at slot {slot}; person is masked")]
    MaskedPerson { slot: usize },

    #[error("infeasible marginal: {dimension}={category} in zone {zone} has no seed support")]
    InfeasibleMarginal {
        zone: u32,
        dimension: String,
        category: String,
    },

    #[error("schema mismatch in {path}: {message}")]
    Schema { path: String, message: String },

    #[error("invalid record in {path} at row {row}: {message}")]
    Invariant {
        path: String,
        row: u64,
        message: String,
    },

    #[error("unknown zone {taz} referenced in {path} at row {row}")]
    UnknownZone { path: String, row: u64, taz: u32 },

    #[error("degenerate mask: household {index} in batch has no valid persons")]
    DegenerateMask { index: usize },

    #[error("non-finite activation in layer {layer}")]
    NumericFault { layer: String },

    #[error("training diverged at epoch {epoch}; returning last finite checkpoint")]
    Diverged {
        epoch: usize,
        last_finite: Box<crate::net::TrainOutput>,
    },

    #[error("household {household_id} has {members} members but {chains} chains were supplied")]
    Arity {
        household_id: u64,
        members: usize,
        chains: usize,
    },

    #[error("no land-use compatible zone for activity {activity}")]
    Compatibility { activity: String },

    #[error("no path from node {from} to node {to}")]
    Unroutable { from: u32, to: u32 },

    #[error("gridlock at t={time}s: {detail}")]
    Gridlock { time: u32, detail: String },

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("distribution {label} is not normalized (sum = {sum})")]
    Normalization { label: String, sum: f64 },

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint schema hash {found} does not match corpus schema {expected}")]
    CheckpointMismatch { expected: String, found: String },

    #[error("stage `{stage}` failed (last good artifact: {last_good:?}): {source}")]
    Stage {
        stage: String,
        last_good: Option<PathBuf>,
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub fn invariant(path: &str, row: u64, message: impl Into<String>) -> Self {
        Error::Invariant {
            path: path.to_string(),
            row,
            message: message.into(),
        }
    }

    /// Process exit code: 2 config, 3 data, 4 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::CheckpointMismatch { .. } => 2,
            Error::NumericFault { .. } | Error::Diverged { .. } | Error::Gridlock { .. } => 4,
            Error::Stage { source, .. } => source.exit_code(),
            Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => 2,
            _ => 3,
        }
    }
}
