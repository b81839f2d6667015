//! Node agent: drives a virtual node through base install, the run-once
//! first-boot hook and in-place reconfiguration.
//!
//! Everything a node's digest depends on comes either from its profile or
//! from preserved disks, so wiping a node and replaying its profile lands on
//! the same digest as updating it in place.

mod components;
mod node;

use thiserror::Error;

use crate::config::ProfileTree;
use crate::packages::PackageError;

pub use components::{ComponentRegistry, ConfigComponent, TreeFileComponent};
pub use node::{
    simulate_reinstall, BootMethod, BootOutcome, ComponentFailure, Disk, InstallSpec, NodeState, Partition, Phase,
    VirtualNode, KERNEL_PACKAGE,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AgentError {
    #[error("node {node}: illegal transition {from} -> {to}")]
    IllegalPhase { node: String, from: Phase, to: Phase },
    #[error("node {node}: `{op}` not allowed in phase {phase}")]
    IllegalOperation { node: String, op: &'static str, phase: Phase },
    #[error("invalid install spec: {0}")]
    InvalidInstallSpec(String),
    #[error("node {node}: first-boot step `{step}` failed: {message}")]
    HookFailed { node: String, step: &'static str, message: String },
    #[error(transparent)]
    Package(#[from] PackageError),
}

/// Where the first-boot hook and update triggers fetch a node's profile.
pub trait ProfileSource {
    fn fetch_profile(&mut self, node: &str) -> Result<ProfileTree, String>;
}

impl<F> ProfileSource for F
where
    F: FnMut(&str) -> Result<ProfileTree, String>,
{
    fn fetch_profile(&mut self, node: &str) -> Result<ProfileTree, String> {
        self(node)
    }
}

impl ProfileSource for crate::config::ProfileRepository {
    fn fetch_profile(&mut self, node: &str) -> Result<ProfileTree, String> {
        self.latest(node)
            .cloned()
            .ok_or_else(|| format!("no profile for {node}"))
    }
}
