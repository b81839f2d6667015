use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use super::scenario::ReplicaDecl;
use super::SimError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Service {
    Profiles,
    Packages,
    Keys,
    Notify,
}

impl Service {
    pub const ALL: [Service; 4] = [Service::Profiles, Service::Packages, Service::Keys, Service::Notify];

    pub fn as_str(self) -> &'static str {
        match self {
            Service::Profiles => "profiles",
            Service::Packages => "packages",
            Service::Keys => "keys",
            Service::Notify => "notify",
        }
    }

    pub fn parse(text: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|s| s.as_str() == text)
    }
}

impl fmt::Display for Service {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServerReplica {
    pub name: String,
    pub alive: bool,
    pub serves: BTreeSet<Service>,
}

/// A request that reached a replica, possibly after skipping dead ones.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Routed {
    pub replica: String,
    /// Dead replicas tried first, in order.
    pub failed: Vec<String>,
}

/// Stateless server replicas behind one round-robin DNS name.
#[derive(Debug, Clone, Default)]
pub struct ReplicaSet {
    replicas: Vec<ServerReplica>,
    next: BTreeMap<Service, usize>,
}

impl ReplicaSet {
    pub fn new(decls: &[ReplicaDecl]) -> Self {
        Self {
            replicas: decls
                .iter()
                .map(|d| ServerReplica {
                    name: d.name.clone(),
                    alive: true,
                    serves: d.serves.clone(),
                })
                .collect(),
            next: BTreeMap::new(),
        }
    }

    pub fn replicas(&self) -> &[ServerReplica] {
        &self.replicas
    }

    pub fn contains(&self, name: &str) -> bool {
        self.replicas.iter().any(|r| r.name == name)
    }

    pub fn set_alive(&mut self, name: &str, alive: bool) -> Result<(), SimError> {
        let r = self
            .replicas
            .iter_mut()
            .find(|r| r.name == name)
            .ok_or_else(|| SimError::UnknownTarget(name.to_string()))?;
        r.alive = alive;
        Ok(())
    }

    /// Round-robin over the live replicas serving `service`.
    pub fn select_replica(&self, service: Service, request_index: usize) -> Result<&ServerReplica, SimError> {
        let alive: Vec<&ServerReplica> = self
            .replicas
            .iter()
            .filter(|r| r.alive && r.serves.contains(&service))
            .collect();
        if alive.is_empty() {
            return Err(SimError::AllReplicasDown(service));
        }
        Ok(alive[request_index % alive.len()])
    }

    /// What a client does: take the next name from the DNS rotation, which
    /// does not know about liveness, and on failure retry each remaining
    /// replica once.
    pub fn route(&mut self, service: Service) -> Result<Routed, SimError> {
        let candidates: Vec<&ServerReplica> = self.replicas.iter().filter(|r| r.serves.contains(&service)).collect();
        if candidates.is_empty() {
            return Err(SimError::AllReplicasDown(service));
        }
        let counter = self.next.entry(service).or_insert(0);
        let start = *counter;
        *counter += 1;
        let mut failed = Vec::new();
        for k in 0..candidates.len() {
            let r = candidates[(start + k) % candidates.len()];
            if r.alive {
                return Ok(Routed {
                    replica: r.name.clone(),
                    failed,
                });
            }
            failed.push(r.name.clone());
        }
        Err(SimError::AllReplicasDown(service))
    }
}
