//! Deterministic discrete-event simulation of a managed site: nodes going
//! through install and reconfiguration, server replicas, the batch cluster,
//! rundowns and monitoring, all driven by a scenario file.

mod engine;
pub mod invariants;
mod monitor;
mod replicas;
mod scenario;
pub mod site;

use thiserror::Error;

use crate::batch::BatchError;
use crate::config::ConfigError;

pub use engine::{SimOutcome, SimStats, Simulation, CONFIG_TAG, DEFAULT_GRACE, PACKAGE_TAG};
pub use monitor::{Alarm, AlarmOutcome, MetricSample, Monitor};
pub use replicas::{ReplicaSet, Routed, ServerReplica, Service};
pub use scenario::{
    parse_command, AlarmRule, Command, NodeDecl, NodeKind, ReplicaDecl, Scenario, ScheduledCommand, Timing,
};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("unknown target {0}")]
    UnknownTarget(String),
    #[error("all replicas serving {0} are down")]
    AllReplicasDown(Service),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Batch(#[from] BatchError),
}
