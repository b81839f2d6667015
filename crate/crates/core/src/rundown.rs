//! Intervention rundowns: drain a node, run the intervention as soon as that
//! node is drained, then put it back into service.
//!
//! Each node is handled on its own. A node emptied after a few minutes is
//! rebooted or reinstalled right away instead of waiting for the slowest
//! node in the cluster.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RundownError {
    #[error("node {0} is not in production")]
    NotInProduction(String),
    #[error("node {0} already has an active rundown")]
    AlreadyActive(String),
    #[error("no active rundown for node {0}")]
    NoActiveRundown(String),
    #[error("rundown of {node} cannot be aborted in phase {phase}")]
    CannotAbort { node: String, phase: DrainPhase },
    #[error("invalid rundown plan: {0}")]
    InvalidPlan(String),
    #[error("empty node list")]
    EmptyNodeList,
    #[error("node {0} listed twice")]
    DuplicateNode(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum NodeKind {
    Batch,
    Interactive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum RundownAction {
    Reboot,
    Reinstall,
    KernelUpdate,
}

impl RundownAction {
    pub fn as_str(self) -> &'static str {
        match self {
            RundownAction::Reboot => "reboot",
            RundownAction::Reinstall => "reinstall",
            RundownAction::KernelUpdate => "kernel-update",
        }
    }

    pub fn parse(text: &str) -> Option<Self> {
        match text {
            "reboot" => Some(RundownAction::Reboot),
            "reinstall" => Some(RundownAction::Reinstall),
            "kernel-update" | "kernel_update" => Some(RundownAction::KernelUpdate),
            _ => None,
        }
    }
}

impl fmt::Display for RundownAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RundownPlan {
    pub node: String,
    pub node_kind: NodeKind,
    pub action: RundownAction,
    /// Grace period for logged-in users; interactive nodes only.
    pub grace: Option<u64>,
    pub requested_at: u64,
}

impl RundownPlan {
    pub fn validate(&self) -> Result<(), RundownError> {
        match (self.node_kind, self.grace) {
            (NodeKind::Interactive, None) => Err(RundownError::InvalidPlan(format!(
                "interactive node {} needs a grace period",
                self.node
            ))),
            (NodeKind::Batch, Some(_)) => Err(RundownError::InvalidPlan(format!(
                "batch node {} takes no grace period",
                self.node
            ))),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum DrainPhase {
    Requested,
    Draining,
    Ready,
    Acting,
    Done,
    Aborted,
}

impl DrainPhase {
    pub fn as_str(self) -> &'static str {
        match self {
            DrainPhase::Requested => "requested",
            DrainPhase::Draining => "draining",
            DrainPhase::Ready => "ready",
            DrainPhase::Acting => "acting",
            DrainPhase::Done => "done",
            DrainPhase::Aborted => "aborted",
        }
    }

    pub fn is_final(self) -> bool {
        matches!(self, DrainPhase::Done | DrainPhase::Aborted)
    }
}

impl fmt::Display for DrainPhase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DrainState {
    pub plan: RundownPlan,
    pub phase: DrainPhase,
    /// Running jobs (batch) or logged-in users (interactive) at the last poll.
    pub blocking: u32,
    pub ready_at: Option<u64>,
    pub acting_at: Option<u64>,
    pub finished_at: Option<u64>,
}

/// What the coordinator needs from the rest of the system.
pub trait RundownEnv {
    fn in_production(&self, node: &str) -> bool;
    fn close_host(&mut self, node: &str, now: u64);
    fn open_host(&mut self, node: &str, now: u64);
    fn running_jobs(&self, node: &str) -> u32;
    fn disable_logins(&mut self, node: &str, now: u64);
    fn enable_logins(&mut self, node: &str, now: u64);
    fn logged_in_users(&self, node: &str) -> u32;
    fn set_muted(&mut self, node: &str, muted: bool, now: u64);
    fn operator_notice(&mut self, node: &str, message: &str, now: u64);
    /// Starts the intervention. The environment reports completion through
    /// [`RundownCoordinator::on_action_complete`].
    fn begin_action(&mut self, node: &str, action: RundownAction, now: u64);
}

#[derive(Debug, Clone, Default)]
pub struct RundownCoordinator {
    max_parallel: Option<usize>,
    active: BTreeMap<String, DrainState>,
    history: Vec<DrainState>,
}

impl RundownCoordinator {
    /// `max_parallel` bounds how many nodes may be acting at once.
    pub fn new(max_parallel: Option<usize>) -> Self {
        Self {
            max_parallel,
            ..Default::default()
        }
    }

    pub fn set_max_parallel(&mut self, max_parallel: Option<usize>) {
        self.max_parallel = max_parallel;
    }

    pub fn state(&self, node: &str) -> Option<&DrainState> {
        self.active.get(node)
    }

    pub fn is_active(&self, node: &str) -> bool {
        self.active.contains_key(node)
    }

    pub fn active(&self) -> impl Iterator<Item = &DrainState> {
        self.active.values()
    }

    /// Finished rundowns, in completion order.
    pub fn history(&self) -> &[DrainState] {
        &self.history
    }

    pub fn acting_count(&self) -> usize {
        self.active.values().filter(|s| s.phase == DrainPhase::Acting).count()
    }

    /// Closes the node to new work, mutes its monitoring and tells the
    /// operators, then checks whether it is already drained.
    pub fn start_rundown(&mut self, plan: RundownPlan, env: &mut dyn RundownEnv) -> Result<DrainState, RundownError> {
        plan.validate()?;
        let node = plan.node.clone();
        if self.active.contains_key(&node) {
            return Err(RundownError::AlreadyActive(node));
        }
        if !env.in_production(&node) {
            return Err(RundownError::NotInProduction(node));
        }
        let now = plan.requested_at;
        match plan.node_kind {
            NodeKind::Batch => env.close_host(&node, now),
            NodeKind::Interactive => env.disable_logins(&node, now),
        }
        env.set_muted(&node, true, now);
        env.operator_notice(&node, &format!("rundown started: {}", plan.action), now);
        self.active.insert(
            node.clone(),
            DrainState {
                plan,
                phase: DrainPhase::Draining,
                blocking: 0,
                ready_at: None,
                acting_at: None,
                finished_at: None,
            },
        );
        self.poll(env, now);
        Ok(self.active.get(&node).cloned().unwrap_or_else(|| self.history.last().unwrap().clone()))
    }

    /// Re-evaluates every draining node and starts actions for ready nodes
    /// while the parallelism bound allows. Returns the nodes whose action
    /// started.
    pub fn poll(&mut self, env: &mut dyn RundownEnv, now: u64) -> Vec<(String, RundownAction)> {
        for state in self.active.values_mut() {
            if state.phase != DrainPhase::Draining {
                continue;
            }
            let node = &state.plan.node;
            let ready = match state.plan.node_kind {
                NodeKind::Batch => {
                    state.blocking = env.running_jobs(node);
                    state.blocking == 0
                }
                NodeKind::Interactive => {
                    state.blocking = env.logged_in_users(node);
                    let expiry = state.plan.requested_at + state.plan.grace.unwrap_or(0);
                    state.blocking == 0 || now >= expiry
                }
            };
            if ready {
                state.phase = DrainPhase::Ready;
                state.ready_at = Some(now);
            }
        }
        self.launch(env, now)
    }

    /// Notification that a draining node has become empty.
    pub fn on_drained(&mut self, node: &str, env: &mut dyn RundownEnv, now: u64) -> Result<DrainState, RundownError> {
        if !self.active.contains_key(node) {
            return Err(RundownError::NoActiveRundown(node.to_string()));
        }
        self.poll(env, now);
        Ok(self.current(node))
    }

    fn current(&self, node: &str) -> DrainState {
        self.active
            .get(node)
            .cloned()
            .or_else(|| self.history.iter().rev().find(|s| s.plan.node == node).cloned())
            .expect("rundown exists")
    }

    fn launch(&mut self, env: &mut dyn RundownEnv, now: u64) -> Vec<(String, RundownAction)> {
        let mut ready: Vec<(u64, String)> = self
            .active
            .values()
            .filter(|s| s.phase == DrainPhase::Ready)
            .map(|s| (s.ready_at.unwrap_or(now), s.plan.node.clone()))
            .collect();
        ready.sort();
        let mut started = Vec::new();
        for (_, node) in ready {
            if self.max_parallel.is_some_and(|m| self.acting_count() >= m) {
                break;
            }
            let state = self.active.get_mut(&node).expect("ready node is active");
            state.phase = DrainPhase::Acting;
            state.acting_at = Some(now);
            let action = state.plan.action;
            env.begin_action(&node, action, now);
            started.push((node, action));
        }
        started
    }

    /// The intervention finished: reopen the node, unmute it and start the
    /// next waiting action if any.
    pub fn on_action_complete(
        &mut self,
        node: &str,
        env: &mut dyn RundownEnv,
        now: u64,
    ) -> Result<(DrainState, Vec<(String, RundownAction)>), RundownError> {
        match self.active.get(node) {
            Some(s) if s.phase == DrainPhase::Acting => {}
            _ => return Err(RundownError::NoActiveRundown(node.to_string())),
        }
        let mut state = self.active.remove(node).unwrap();
        Self::release(&state, env, now);
        env.operator_notice(node, &format!("rundown done: {}", state.plan.action), now);
        state.phase = DrainPhase::Done;
        state.finished_at = Some(now);
        self.history.push(state.clone());
        let started = self.launch(env, now);
        Ok((state, started))
    }

    /// Cancels a rundown that has not started acting. No action runs.
    pub fn abort_rundown(&mut self, node: &str, env: &mut dyn RundownEnv, now: u64) -> Result<DrainState, RundownError> {
        let phase = self
            .active
            .get(node)
            .ok_or_else(|| RundownError::NoActiveRundown(node.to_string()))?
            .phase;
        if phase == DrainPhase::Acting {
            return Err(RundownError::CannotAbort {
                node: node.to_string(),
                phase,
            });
        }
        let mut state = self.active.remove(node).unwrap();
        Self::release(&state, env, now);
        env.operator_notice(node, "rundown aborted", now);
        state.phase = DrainPhase::Aborted;
        state.finished_at = Some(now);
        self.history.push(state.clone());
        Ok(state)
    }

    fn release(state: &DrainState, env: &mut dyn RundownEnv, now: u64) {
        let node = &state.plan.node;
        match state.plan.node_kind {
            NodeKind::Batch => env.open_host(node, now),
            NodeKind::Interactive => env.enable_logins(node, now),
        }
        env.set_muted(node, false, now);
    }

    /// Earliest grace expiry among draining interactive nodes.
    pub fn next_deadline(&self) -> Option<u64> {
        self.active
            .values()
            .filter(|s| s.phase == DrainPhase::Draining)
            .filter_map(|s| s.plan.grace.map(|g| s.plan.requested_at + g))
            .min()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScheduledRundown {
    pub node: String,
    pub drained_at: u64,
    pub act_start: u64,
    pub act_end: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RundownSchedule {
    pub entries: Vec<ScheduledRundown>,
}

impl RundownSchedule {
    /// Node-time during which nodes were drained but not back in service.
    pub fn lost_node_time(&self) -> u64 {
        self.entries.iter().map(|e| e.act_end - e.drained_at).sum()
    }

    pub fn makespan(&self) -> u64 {
        self.entries.iter().map(|e| e.act_end).max().unwrap_or(0)
    }

    pub fn get(&self, node: &str) -> Option<&ScheduledRundown> {
        self.entries.iter().find(|e| e.node == node)
    }
}

fn check_nodes(nodes: &[(String, u64)]) -> Result<(), RundownError> {
    if nodes.is_empty() {
        return Err(RundownError::EmptyNodeList);
    }
    let mut seen = BTreeSet::new();
    for (n, _) in nodes {
        if !seen.insert(n) {
            return Err(RundownError::DuplicateNode(n.clone()));
        }
    }
    Ok(())
}

/// Runs acting phases in ready order with at most `max_parallel` at a time.
fn schedule_actions(ready: Vec<(u64, String, u64)>, action_time: u64, max_parallel: Option<usize>) -> RundownSchedule {
    let mut ready = ready;
    ready.sort_by(|a, b| (a.0, &a.1).cmp(&(b.0, &b.1)));
    let slots = max_parallel.unwrap_or(usize::MAX).max(1);
    let mut busy_until: Vec<u64> = Vec::new();
    let mut entries = Vec::new();
    for (ready_at, node, drained_at) in ready {
        let start = if busy_until.len() < slots {
            ready_at
        } else {
            busy_until.sort_unstable();
            ready_at.max(busy_until.remove(0))
        };
        busy_until.push(start + action_time);
        entries.push(ScheduledRundown {
            node,
            drained_at,
            act_start: start,
            act_end: start + action_time,
        });
    }
    RundownSchedule { entries }
}

/// Per-node rundown of a fleet: every node starts draining at time 0 and
/// acts as soon as it is empty. `nodes` pairs each node with the remaining
/// runtime of its longest job.
pub fn fleet_rundown(
    nodes: &[(String, u64)],
    action_time: u64,
    max_parallel: Option<usize>,
) -> Result<RundownSchedule, RundownError> {
    check_nodes(nodes)?;
    let ready = nodes.iter().map(|(n, d)| (*d, n.clone(), *d)).collect();
    Ok(schedule_actions(ready, action_time, max_parallel))
}

/// The alternative being avoided: nobody acts until the whole cluster is empty.
pub fn barrier_rundown(
    nodes: &[(String, u64)],
    action_time: u64,
    max_parallel: Option<usize>,
) -> Result<RundownSchedule, RundownError> {
    check_nodes(nodes)?;
    let barrier = nodes.iter().map(|(_, d)| *d).max().unwrap_or(0);
    let ready = nodes.iter().map(|(n, d)| (barrier, n.clone(), *d)).collect();
    Ok(schedule_actions(ready, action_time, max_parallel))
}
