//! Package reconciliation: make a node's installed packages exactly match its
//! configured list, removing anything that is not configured.

mod plan;
mod spec;
mod version;

use thiserror::Error;

pub use plan::{apply, plan, Action, ReconcilePlan};
pub use spec::{DesiredList, InstalledSet, PackageKey, PackageSet, PackageSpec};
pub use version::{compare_segments, compare_versions};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PackageError {
    #[error("cannot compare different packages {left} and {right}")]
    IdentityMismatch { left: String, right: String },
    #[error("duplicate package {0}")]
    DuplicateKey(String),
    #[error("invalid package spec: {0}")]
    InvalidSpec(String),
    #[error("line {line}: {message}")]
    MalformedLine { line: usize, message: String },
    #[error("stale plan: precondition of `{0}` does not hold")]
    StalePlan(String),
}
