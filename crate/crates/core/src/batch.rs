//! Single-cluster batch scheduler with flat fairshare groups.
//!
//! A group's priority is `share / (1 + decayed_usage)`, where usage grows by
//! one per CPU-second consumed and halves every half-life. Whenever a slot is
//! free the highest-priority group with pending work gets it, so an idle
//! group's share flows to the others and no slot idles while work waits.

use std::collections::{BTreeMap, VecDeque};
use std::fmt::Write as _;

use thiserror::Error;

pub const DEFAULT_HALF_LIFE: u64 = 86_400;
pub const DEFAULT_MAX_RUNTIME: u64 = 7 * 86_400;

pub const REASON_NEW: &str = "new";
pub const REASON_NO_OPEN_SLOTS: &str = "no_open_slots";
pub const REASON_HOST_CLOSED: &str = "host_closed_for_intervention";
pub const REASON_PRIORITY: &str = "group_priority_below_others";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BatchError {
    #[error("unknown group {0}")]
    UnknownGroup(String),
    #[error("unknown host {0}")]
    UnknownHost(String),
    #[error("unknown job {0}")]
    UnknownJob(JobId),
    #[error("job {0} is not pending")]
    NotPending(JobId),
    #[error("duplicate {kind} {name}")]
    Duplicate { kind: &'static str, name: String },
    #[error("invalid share {share} for group {group}")]
    InvalidShare { group: String, share: f64 },
    #[error("shares sum to {0}, expected 1")]
    SharesDoNotSumToOne(f64),
    #[error("runtime {runtime} exceeds the cluster limit {limit}")]
    RuntimeTooLong { runtime: u64, limit: u64 },
    #[error("host {0} needs at least one slot")]
    NoSlots(String),
    #[error("line {line}: {message}")]
    Workload { line: usize, message: String },
}

pub type JobId = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchConfig {
    pub half_life: u64,
    pub max_runtime: u64,
}

impl Default for BatchConfig {
    fn default() -> Self {
        Self {
            half_life: DEFAULT_HALF_LIFE,
            max_runtime: DEFAULT_MAX_RUNTIME,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShareGroup {
    pub name: String,
    pub share: f64,
    pub decayed_usage: f64,
    /// Undecayed CPU-seconds consumed so far.
    pub consumed: f64,
    running: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum JobState {
    Pending,
    Running { host: String, started: u64, ends_at: u64 },
    Done { host: String, finished: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Job {
    pub id: JobId,
    pub group: String,
    pub submit_time: u64,
    pub runtime: u64,
    pub state: JobState,
    pub pending_reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HostSlot {
    pub host: String,
    pub slots: u32,
    pub open: bool,
    running: Vec<JobId>,
}

impl HostSlot {
    pub fn free(&self) -> u32 {
        self.slots - self.running.len() as u32
    }

    pub fn running(&self) -> &[JobId] {
        &self.running
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Assignment {
    pub at: u64,
    pub job: JobId,
    pub group: String,
    pub host: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TickResult {
    pub completed: Vec<JobId>,
    pub assigned: Vec<Assignment>,
}

#[derive(Debug, Clone)]
pub struct BatchScheduler {
    config: BatchConfig,
    groups: BTreeMap<String, ShareGroup>,
    hosts: BTreeMap<String, HostSlot>,
    jobs: BTreeMap<JobId, Job>,
    queues: BTreeMap<String, VecDeque<JobId>>,
    clock: u64,
    next_id: JobId,
    done: usize,
}

impl BatchScheduler {
    /// `groups` are (name, share) pairs whose shares must sum to 1.
    pub fn new(config: BatchConfig, groups: &[(&str, f64)]) -> Result<Self, BatchError> {
        let mut map = BTreeMap::new();
        for &(name, share) in groups {
            if !(share > 0.0 && share <= 1.0) {
                return Err(BatchError::InvalidShare {
                    group: name.to_string(),
                    share,
                });
            }
            let group = ShareGroup {
                name: name.to_string(),
                share,
                decayed_usage: 0.0,
                consumed: 0.0,
                running: 0,
            };
            if map.insert(name.to_string(), group).is_some() {
                return Err(BatchError::Duplicate {
                    kind: "group",
                    name: name.to_string(),
                });
            }
        }
        let total: f64 = groups.iter().map(|g| g.1).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(BatchError::SharesDoNotSumToOne(total));
        }
        let queues = map.keys().map(|k| (k.clone(), VecDeque::new())).collect();
        Ok(Self {
            config,
            groups: map,
            hosts: BTreeMap::new(),
            jobs: BTreeMap::new(),
            queues,
            clock: 0,
            next_id: 1,
            done: 0,
        })
    }

    pub fn config(&self) -> BatchConfig {
        self.config
    }

    pub fn clock(&self) -> u64 {
        self.clock
    }

    pub fn groups(&self) -> impl Iterator<Item = &ShareGroup> {
        self.groups.values()
    }

    pub fn hosts(&self) -> impl Iterator<Item = &HostSlot> {
        self.hosts.values()
    }

    pub fn host(&self, name: &str) -> Option<&HostSlot> {
        self.hosts.get(name)
    }

    pub fn job(&self, id: JobId) -> Option<&Job> {
        self.jobs.get(&id)
    }

    pub fn jobs(&self) -> impl Iterator<Item = &Job> {
        self.jobs.values()
    }

    pub fn add_host(&mut self, name: &str, slots: u32) -> Result<(), BatchError> {
        if slots == 0 {
            return Err(BatchError::NoSlots(name.to_string()));
        }
        if self.hosts.contains_key(name) {
            return Err(BatchError::Duplicate {
                kind: "host",
                name: name.to_string(),
            });
        }
        self.hosts.insert(
            name.to_string(),
            HostSlot {
                host: name.to_string(),
                slots,
                open: true,
                running: Vec::new(),
            },
        );
        Ok(())
    }

    /// Stops new jobs landing on the host. Running jobs continue.
    pub fn close_host(&mut self, name: &str) -> Result<(), BatchError> {
        self.host_mut(name)?.open = false;
        Ok(())
    }

    pub fn open_host(&mut self, name: &str) -> Result<(), BatchError> {
        self.host_mut(name)?.open = true;
        Ok(())
    }

    fn host_mut(&mut self, name: &str) -> Result<&mut HostSlot, BatchError> {
        self.hosts
            .get_mut(name)
            .ok_or_else(|| BatchError::UnknownHost(name.to_string()))
    }

    /// Takes a failed host out of the cluster. Its running jobs go back to
    /// the head of their group's queue as new submissions.
    pub fn remove_host(&mut self, name: &str, now: u64) -> Result<Vec<JobId>, BatchError> {
        self.advance(now);
        let host = self
            .hosts
            .remove(name)
            .ok_or_else(|| BatchError::UnknownHost(name.to_string()))?;
        let mut lost = host.running.clone();
        lost.sort_unstable();
        for &id in lost.iter().rev() {
            let job = self.jobs.get_mut(&id).expect("running job exists");
            job.state = JobState::Pending;
            job.pending_reason = REASON_NEW.to_string();
            if let Some(g) = self.groups.get_mut(&job.group) {
                g.running -= 1;
            }
            self.queues
                .get_mut(&job.group)
                .expect("group queue exists")
                .push_front(id);
        }
        Ok(lost)
    }

    pub fn submit(&mut self, group: &str, runtime: u64, now: u64) -> Result<JobId, BatchError> {
        if !self.groups.contains_key(group) {
            return Err(BatchError::UnknownGroup(group.to_string()));
        }
        if runtime > self.config.max_runtime {
            return Err(BatchError::RuntimeTooLong {
                runtime,
                limit: self.config.max_runtime,
            });
        }
        let id = self.next_id;
        self.next_id += 1;
        self.jobs.insert(
            id,
            Job {
                id,
                group: group.to_string(),
                submit_time: now,
                runtime,
                state: JobState::Pending,
                pending_reason: REASON_NEW.to_string(),
            },
        );
        self.queues.get_mut(group).expect("group queue exists").push_back(id);
        Ok(id)
    }

    /// Group usage decayed to `now` without changing state.
    pub fn decayed_usage(&self, group: &str, now: u64) -> Result<f64, BatchError> {
        let g = self
            .groups
            .get(group)
            .ok_or_else(|| BatchError::UnknownGroup(group.to_string()))?;
        let dt = now.saturating_sub(self.clock) as f64;
        Ok(decay(g.decayed_usage, g.running as f64, dt, self.config.half_life as f64))
    }

    pub fn priority(&self, group: &str, now: u64) -> Result<f64, BatchError> {
        let share = self.groups.get(group).map(|g| g.share).unwrap_or_default();
        Ok(share / (1.0 + self.decayed_usage(group, now)?))
    }

    /// Groups by descending priority, ties broken by name.
    fn ranking(&self) -> Vec<(&str, f64)> {
        let mut ranked: Vec<(&str, f64)> = self
            .groups
            .values()
            .map(|g| (g.name.as_str(), g.share / (1.0 + g.decayed_usage)))
            .collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        ranked
    }

    /// Accrues usage up to `t` and completes jobs ending at or before `t`, in
    /// completion order, so that usage changes exactly when jobs end.
    fn advance(&mut self, t: u64) -> Vec<JobId> {
        let mut finished = Vec::new();
        if t < self.clock {
            return finished;
        }
        loop {
            let next = self
                .hosts
                .values()
                .flat_map(|h| h.running.iter())
                .filter_map(|id| match &self.jobs[id].state {
                    JobState::Running { ends_at, .. } if *ends_at <= t => Some((*ends_at, *id)),
                    _ => None,
                })
                .min();
            let Some((at, id)) = next else { break };
            self.accrue(at);
            self.finish(id, at);
            finished.push(id);
        }
        self.accrue(t);
        finished
    }

    fn accrue(&mut self, t: u64) {
        let dt = t.saturating_sub(self.clock) as f64;
        if dt > 0.0 {
            let h = self.config.half_life as f64;
            for g in self.groups.values_mut() {
                g.decayed_usage = decay(g.decayed_usage, g.running as f64, dt, h);
                g.consumed += g.running as f64 * dt;
            }
        }
        self.clock = self.clock.max(t);
    }

    fn finish(&mut self, id: JobId, at: u64) {
        let job = self.jobs.get_mut(&id).expect("job exists");
        let JobState::Running { host, .. } = &job.state else {
            return;
        };
        let host = host.clone();
        if let Some(h) = self.hosts.get_mut(&host) {
            h.running.retain(|&j| j != id);
        }
        if let Some(g) = self.groups.get_mut(&job.group) {
            g.running -= 1;
        }
        job.state = JobState::Done { host, finished: at };
        job.pending_reason.clear();
        self.done += 1;
    }

    /// Earliest end time among running jobs.
    pub fn next_completion(&self) -> Option<u64> {
        self.jobs
            .values()
            .filter_map(|j| match j.state {
                JobState::Running { ends_at, .. } => Some(ends_at),
                _ => None,
            })
            .min()
    }

    /// Completes due jobs, then fills free slots on open hosts from the
    /// highest-priority group with pending work, and finally refreshes the
    /// pending reason of every job still waiting.
    pub fn schedule_tick(&mut self, now: u64) -> Vec<Assignment> {
        self.tick(now).assigned
    }

    /// [`schedule_tick`](Self::schedule_tick), also reporting the jobs that completed.
    pub fn tick(&mut self, now: u64) -> TickResult {
        let completed = self.advance(now);
        let mut assigned = Vec::new();
        while let Some(host) = self
            .hosts
            .values()
            .filter(|h| h.open && h.free() > 0)
            .max_by(|a, b| a.free().cmp(&b.free()).then_with(|| b.host.cmp(&a.host)))
            .map(|h| h.host.clone())
        {
            let Some(group) = self
                .ranking()
                .into_iter()
                .find(|(g, _)| !self.queues[*g].is_empty())
                .map(|(g, _)| g.to_string())
            else {
                break;
            };
            let id = self.queues.get_mut(&group).unwrap().pop_front().unwrap();
            let job = self.jobs.get_mut(&id).unwrap();
            job.state = JobState::Running {
                host: host.clone(),
                started: now,
                ends_at: now + job.runtime,
            };
            job.pending_reason.clear();
            self.hosts.get_mut(&host).unwrap().running.push(id);
            self.groups.get_mut(&group).unwrap().running += 1;
            assigned.push(Assignment {
                at: now,
                job: id,
                group,
                host,
            });
        }
        self.refresh_reasons();
        TickResult { completed, assigned }
    }

    fn refresh_reasons(&mut self) {
        let any_open = self.hosts.values().any(|h| h.open);
        let closed_with_room = self.hosts.values().any(|h| !h.open && h.free() > 0);
        let ranking: Vec<String> = self.ranking().into_iter().map(|(g, _)| g.to_string()).collect();
        let mut busy_above = false;
        for group in ranking {
            let reason = if !any_open {
                if self.hosts.is_empty() {
                    REASON_NO_OPEN_SLOTS
                } else {
                    REASON_HOST_CLOSED
                }
            } else if closed_with_room {
                REASON_HOST_CLOSED
            } else if busy_above {
                REASON_PRIORITY
            } else {
                REASON_NO_OPEN_SLOTS
            };
            for id in &self.queues[&group] {
                self.jobs.get_mut(id).unwrap().pending_reason = reason.to_string();
            }
            let g = &self.groups[&group];
            busy_above |= g.running > 0 || !self.queues[&group].is_empty();
        }
    }

    pub fn pending_reason(&self, id: JobId) -> Result<&str, BatchError> {
        let job = self.jobs.get(&id).ok_or(BatchError::UnknownJob(id))?;
        match job.state {
            JobState::Pending => Ok(&job.pending_reason),
            _ => Err(BatchError::NotPending(id)),
        }
    }

    pub fn free_open_slots(&self) -> u32 {
        self.hosts.values().filter(|h| h.open).map(HostSlot::free).sum()
    }

    pub fn pending_count(&self) -> usize {
        self.queues.values().map(VecDeque::len).sum()
    }

    pub fn running_count(&self) -> usize {
        self.hosts.values().map(|h| h.running.len()).sum()
    }

    pub fn done_count(&self) -> usize {
        self.done
    }

    /// Holds after every tick: no free open slot while work is pending.
    pub fn is_work_conserving(&self) -> bool {
        self.free_open_slots() == 0 || self.pending_count() == 0
    }

    /// Holds at all times: every job is pending, running or done exactly once.
    pub fn jobs_conserved(&self) -> bool {
        self.jobs.len() == self.pending_count() + self.running_count() + self.done_count()
    }

    /// Per-group consumption as of `now`.
    pub fn report(&self, now: u64) -> BatchReport {
        let dt = now.saturating_sub(self.clock) as f64;
        let consumed: BTreeMap<&str, f64> = self
            .groups
            .values()
            .map(|g| (g.name.as_str(), g.consumed + g.running as f64 * dt))
            .collect();
        let total: f64 = consumed.values().sum();
        let rows = self
            .groups
            .values()
            .map(|g| {
                let mut reasons = BTreeMap::new();
                for id in &self.queues[&g.name] {
                    *reasons.entry(self.jobs[id].pending_reason.clone()).or_insert(0) += 1;
                }
                GroupReport {
                    group: g.name.clone(),
                    share: g.share,
                    cpu_seconds: consumed[g.name.as_str()],
                    fraction: if total > 0.0 { consumed[g.name.as_str()] / total } else { 0.0 },
                    running: g.running as usize,
                    pending: self.queues[&g.name].len(),
                    reasons,
                }
            })
            .collect();
        BatchReport { at: now, rows }
    }
}

/// Usage after `dt` seconds starting from `usage` with `rate` CPUs busy:
/// the closed form of `dU/dt = rate - U ln2 / H`.
fn decay(usage: f64, rate: f64, dt: f64, half_life: f64) -> f64 {
    let factor = 0.5f64.powf(dt / half_life);
    usage * factor + rate * half_life / std::f64::consts::LN_2 * (1.0 - factor)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupReport {
    pub group: String,
    pub share: f64,
    pub cpu_seconds: f64,
    pub fraction: f64,
    pub running: usize,
    pub pending: usize,
    pub reasons: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchReport {
    pub at: u64,
    pub rows: Vec<GroupReport>,
}

impl BatchReport {
    pub fn render(&self) -> String {
        let mut out = format!(
            "{:<12} {:>6} {:>14} {:>8} {:>8} {:>8}\n",
            "group", "share", "cpu_seconds", "used", "running", "pending"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<12} {:>6.3} {:>14.0} {:>8.3} {:>8} {:>8}",
                r.group, r.share, r.cpu_seconds, r.fraction, r.running, r.pending
            );
        }
        out.push_str("\npending reasons\n");
        let _ = writeln!(out, "{:<12} {:<30} {:>6}", "group", "reason", "jobs");
        for r in &self.rows {
            for (reason, n) in &r.reasons {
                let _ = writeln!(out, "{:<12} {:<30} {:>6}", r.group, reason, n);
            }
        }
        out
    }
}

/// A batch workload file.
///
/// ```text
/// half-life 3600
/// group atlas share=0.6
/// host lxb001 slots=2
/// submit 0 atlas 600
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct Workload {
    pub config: BatchConfig,
    pub groups: Vec<(String, f64)>,
    pub hosts: Vec<(String, u32)>,
    pub submits: Vec<(u64, String, u64)>,
}

impl Workload {
    pub fn parse(text: &str) -> Result<Self, BatchError> {
        let mut w = Workload {
            config: BatchConfig::default(),
            groups: Vec::new(),
            hosts: Vec::new(),
            submits: Vec::new(),
        };
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| BatchError::Workload { line: i + 1, message };
            let words: Vec<&str> = line.split_whitespace().collect();
            let num = |s: &str| s.parse::<u64>().map_err(|_| err(format!("bad number `{s}`")));
            match words.as_slice() {
                ["half-life", h] => w.config.half_life = num(h)?,
                ["max-runtime", m] => w.config.max_runtime = num(m)?,
                ["group", name, share] => {
                    let share = share
                        .strip_prefix("share=")
                        .and_then(|s| s.parse().ok())
                        .ok_or_else(|| err(format!("bad share `{share}`")))?;
                    w.groups.push((name.to_string(), share));
                }
                ["host", name, slots] => {
                    let slots = slots
                        .strip_prefix("slots=")
                        .and_then(|s| s.parse().ok())
                        .ok_or_else(|| err(format!("bad slots `{slots}`")))?;
                    w.hosts.push((name.to_string(), slots));
                }
                ["submit", t, group, runtime] => w.submits.push((num(t)?, group.to_string(), num(runtime)?)),
                _ => return Err(err(format!("unrecognised line `{line}`"))),
            }
        }
        w.submits.sort_by_key(|s| s.0);
        Ok(w)
    }

    pub fn scheduler(&self) -> Result<BatchScheduler, BatchError> {
        let groups: Vec<(&str, f64)> = self.groups.iter().map(|(n, s)| (n.as_str(), *s)).collect();
        let mut s = BatchScheduler::new(self.config, &groups)?;
        for (name, slots) in &self.hosts {
            s.add_host(name, *slots)?;
        }
        Ok(s)
    }

    /// Replays the workload until `until` (or until all work is done).
    pub fn run(&self, until: Option<u64>) -> Result<BatchScheduler, BatchError> {
        let mut s = self.scheduler()?;
        let mut submits = self.submits.iter().peekable();
        loop {
            let next_submit = submits.peek().map(|s| s.0);
            let next = match (next_submit, s.next_completion()) {
                (Some(a), Some(b)) => a.min(b),
                (Some(a), None) => a,
                (None, Some(b)) => b,
                (None, None) => break,
            };
            if until.is_some_and(|u| next > u) {
                break;
            }
            while let Some((_, group, runtime)) = submits.next_if(|s| s.0 <= next) {
                s.submit(group, *runtime, next)?;
            }
            s.schedule_tick(next);
        }
        if let Some(u) = until {
            s.schedule_tick(u);
        }
        Ok(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sched(groups: &[(&str, f64)], hosts: &[(&str, u32)]) -> BatchScheduler {
        let mut s = BatchScheduler::new(BatchConfig::default(), groups).unwrap();
        for (h, n) in hosts {
            s.add_host(h, *n).unwrap();
        }
        s
    }

    #[test]
    fn submit_and_reasons() {
        let mut s = sched(&[("atlas", 0.5), ("cms", 0.5)], &[("h1", 1)]);
        let a = s.submit("atlas", 10, 0).unwrap();
        let c = s.submit("cms", 10, 0).unwrap();
        assert_eq!(s.pending_reason(a).unwrap(), "new");
        assert_eq!(s.submit("lhcb", 1, 0), Err(BatchError::UnknownGroup("lhcb".into())));
        let got = s.schedule_tick(0);
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].group, "atlas");
        assert_eq!(s.pending_reason(c).unwrap(), REASON_PRIORITY);
        assert_eq!(s.pending_reason(a), Err(BatchError::NotPending(a)));
    }

    #[test]
    fn shares_must_sum_to_one() {
        assert!(matches!(
            BatchScheduler::new(BatchConfig::default(), &[("a", 0.5), ("b", 0.4)]),
            Err(BatchError::SharesDoNotSumToOne(_))
        ));
        assert!(BatchScheduler::new(BatchConfig::default(), &[("a", 0.0), ("b", 1.0)]).is_err());
    }

    #[test]
    fn zero_runtime_job_completes_next_tick() {
        let mut s = sched(&[("a", 1.0)], &[("h", 1)]);
        let id = s.submit("a", 0, 5).unwrap();
        s.schedule_tick(5);
        assert!(matches!(s.job(id).unwrap().state, JobState::Running { .. }));
        s.schedule_tick(5);
        assert_eq!(s.job(id).unwrap().state, JobState::Done { host: "h".into(), finished: 5 });
    }

    #[test]
    fn closed_hosts() {
        let mut s = sched(&[("a", 1.0)], &[("h1", 1), ("h2", 1)]);
        s.close_host("h1").unwrap();
        s.close_host("h2").unwrap();
        let id = s.submit("a", 1, 0).unwrap();
        assert!(s.schedule_tick(0).is_empty());
        assert_eq!(s.pending_reason(id).unwrap(), REASON_HOST_CLOSED);

        let mut empty = sched(&[("a", 1.0)], &[]);
        let id = empty.submit("a", 1, 0).unwrap();
        empty.schedule_tick(0);
        assert_eq!(empty.pending_reason(id).unwrap(), REASON_NO_OPEN_SLOTS);
    }

    #[test]
    fn closing_keeps_running_jobs() {
        let mut s = sched(&[("a", 1.0)], &[("h", 1)]);
        let id = s.submit("a", 100, 0).unwrap();
        s.schedule_tick(0);
        s.close_host("h").unwrap();
        let next = s.submit("a", 1, 10).unwrap();
        assert!(s.schedule_tick(10).is_empty());
        s.schedule_tick(100);
        assert!(matches!(s.job(id).unwrap().state, JobState::Done { .. }));
        assert!(s.job(next).unwrap().state == JobState::Pending);
        assert_eq!(s.pending_reason(next).unwrap(), REASON_HOST_CLOSED);
    }

    #[test]
    fn priority_properties() {
        let mut s = sched(&[("a", 0.5), ("b", 0.5)], &[("h", 1)]);
        assert_eq!(s.priority("a", 0).unwrap(), s.priority("b", 0).unwrap());
        s.submit("a", 100, 0).unwrap();
        s.schedule_tick(0);
        s.schedule_tick(100);
        assert!(s.priority("b", 100).unwrap() > s.priority("a", 100).unwrap());
    }

    #[test]
    fn usage_accrual_is_exact_and_halves() {
        let h = 1000;
        let mut s = BatchScheduler::new(BatchConfig { half_life: h, max_runtime: 10_000 }, &[("a", 1.0)]).unwrap();
        s.add_host("x", 1).unwrap();
        s.submit("a", 500, 0).unwrap();
        s.schedule_tick(0);
        s.schedule_tick(500);
        let expect = h as f64 / std::f64::consts::LN_2 * (1.0 - 0.5f64.powf(0.5));
        assert!((s.decayed_usage("a", 500).unwrap() - expect).abs() < 1e-9);
        assert!((s.decayed_usage("a", 1500).unwrap() - expect / 2.0).abs() < 1e-9);
    }

    #[test]
    fn failed_host_requeues_jobs_as_new() {
        let mut s = sched(&[("a", 1.0)], &[("h1", 2)]);
        let j1 = s.submit("a", 50, 0).unwrap();
        let j2 = s.submit("a", 50, 0).unwrap();
        let j3 = s.submit("a", 50, 0).unwrap();
        s.schedule_tick(0);
        assert_eq!(s.remove_host("h1", 10).unwrap(), vec![j1, j2]);
        assert_eq!(s.pending_reason(j1).unwrap(), REASON_NEW);
        assert!(s.jobs_conserved());
        s.add_host("h2", 1).unwrap();
        let got = s.schedule_tick(10);
        assert_eq!(got[0].job, j1);
        assert_eq!(s.pending_reason(j3).unwrap(), REASON_NO_OPEN_SLOTS);
    }

    #[test]
    fn workload_round_trip() {
        let text = "half-life 100\ngroup a share=0.5\ngroup b share=0.5\nhost h slots=1\nsubmit 0 a 10\nsubmit 0 b 10 # tail\n";
        let w = Workload::parse(text).unwrap();
        let s = w.run(None).unwrap();
        assert_eq!(s.done_count(), 2);
        let report = s.report(s.clock());
        assert!((report.rows[0].fraction - 0.5).abs() < 1e-12);
        assert!(report.render().starts_with("group "));
        assert!(Workload::parse("bogus").is_err());
    }
}
