use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::agent::{simulate_reinstall, BootOutcome, ComponentRegistry, InstallSpec, Phase, VirtualNode};
use crate::batch::{BatchConfig, BatchScheduler};
use crate::bootstrap::{KeyHandle, KeyServer, DEFAULT_WINDOW_SECS};
use crate::config::{parse_statement, ProfileRepository, ProfileTree, TemplateSet};
use crate::notify::{NotifyClient, NotifyServer};
use crate::rundown::{self, DrainPhase, RundownAction, RundownCoordinator, RundownEnv, RundownPlan};

use super::invariants;
use super::monitor::{AlarmOutcome, Monitor};
use super::replicas::{ReplicaSet, Service};
use super::scenario::{Command, NodeDecl, NodeKind, Scenario, Timing};
use super::site;
use super::SimError;

/// Tags nodes subscribe to after installation.
pub const PACKAGE_TAG: &str = "rpmupdate";
pub const CONFIG_TAG: &str = "confupdate";

/// Grace period used for interactive rundowns when none is given.
pub const DEFAULT_GRACE: u64 = 3600;

#[derive(Debug, Clone, PartialEq)]
enum Event {
    Command(Command),
    KeyFetch { node: String, install: u64 },
    BaseDone { node: String, install: u64 },
    BootDone { node: String, install: u64 },
    Deliver { client: String },
    BatchWake,
    RundownDeadline,
    ActionDone { node: String, action: RundownAction },
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SimStats {
    pub events: u64,
    pub installs_started: u64,
    pub installs_completed: u64,
    pub install_failures: u64,
    pub retries: u64,
    pub failed_requests: u64,
    pub reconciles: u64,
    pub deliveries: u64,
    pub duplicates: u64,
    pub alarms: u64,
    pub suppressed_alarms: u64,
    pub digests_checked: u64,
    pub digest_mismatches: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimOutcome {
    pub trace: Vec<String>,
    pub violations: Vec<String>,
    pub stats: SimStats,
    pub end_time: u64,
}

impl SimOutcome {
    pub fn trace_text(&self) -> String {
        let mut out = String::new();
        for line in &self.trace {
            out.push_str(line);
            out.push('\n');
        }
        out
    }

    pub fn ok(&self) -> bool {
        self.violations.is_empty()
    }
}

#[derive(Debug, Clone)]
struct SimNode {
    decl: NodeDecl,
    spec: InstallSpec,
    agent: VirtualNode,
    key: Option<KeyHandle>,
    users: u32,
    logins_enabled: bool,
    client: NotifyClient,
}

/// Everything except the rundown coordinator, which drives the world
/// through [`RundownEnv`].
struct World {
    nodes: BTreeMap<String, SimNode>,
    templates: TemplateSet,
    repo: ProfileRepository,
    registry: ComponentRegistry,
    replicas: ReplicaSet,
    keys: KeyServer,
    notify: NotifyServer,
    batch: BatchScheduler,
    monitor: Monitor,
    rng: ChaCha8Rng,
    seed: u64,
    timing: Timing,
    latency: (u64, u64),
    window: u64,
    queue: BTreeMap<(u64, u64), Event>,
    seq: u64,
    batch_wakes: BTreeSet<u64>,
    deadlines: BTreeSet<u64>,
    trace: Vec<String>,
    violations: Vec<String>,
    stats: SimStats,
}

/// Trace values must not contain spaces.
fn token(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join("_")
}

impl World {
    fn log(&mut self, now: u64, ev: &str, fields: String) {
        let mut line = format!("t={now} ev={ev}");
        if !fields.is_empty() {
            line.push(' ');
            line.push_str(&fields);
        }
        self.trace.push(line);
    }

    fn violation(&mut self, now: u64, message: String) {
        self.log(now, "violation", format!("what={}", token(&message)));
        self.violations.push(format!("t={now}: {message}"));
    }

    fn push(&mut self, at: u64, event: Event) {
        self.queue.insert((at, self.seq), event);
        self.seq += 1;
    }

    fn lat(&mut self) -> u64 {
        let (lo, hi) = self.latency;
        self.rng.gen_range(lo..=hi)
    }

    fn phase(&self, node: &str) -> Phase {
        self.nodes[node].agent.phase()
    }

    fn log_phase(&mut self, now: u64, node: &str, before: Phase, cause: &str) {
        let after = self.phase(node);
        if after != before {
            self.log(now, "phase", format!("node={node} from={before} to={after} cause={cause}"));
        }
    }

    fn set_phase(&mut self, now: u64, node: &str, next: Phase, cause: &str) {
        let before = self.phase(node);
        if self.nodes.get_mut(node).unwrap().agent.transition(next).is_ok() {
            self.log_phase(now, node, before, cause);
        }
    }

    /// Sends one request through the DNS rotation, logging each retry.
    fn route(&mut self, now: u64, node: &str, service: Service) -> Result<String, String> {
        match self.replicas.route(service) {
            Ok(routed) => {
                for dead in &routed.failed {
                    self.stats.retries += 1;
                    self.log(now, "retry", format!("node={node} service={service} replica={dead}"));
                }
                Ok(routed.replica)
            }
            Err(e) => {
                self.stats.failed_requests += 1;
                self.log(now, "request_failed", format!("node={node} service={service}"));
                Err(e.to_string())
            }
        }
    }

    /// Profile plus package repository access, as every reconfiguration needs.
    fn fetch_profile(&mut self, now: u64, node: &str, with_packages: bool) -> Result<ProfileTree, String> {
        self.route(now, node, Service::Profiles)?;
        if with_packages {
            self.route(now, node, Service::Packages)?;
        }
        self.repo
            .latest(node)
            .cloned()
            .ok_or_else(|| format!("no profile for {node}"))
    }

    fn secret_payload(&self, node: &str, label: &str, epoch: u64) -> Vec<u8> {
        match label {
            "root_password" => format!("rootpw:{node}:{}", self.seed).into_bytes(),
            _ => format!("{label}:{node}:{epoch}:{}", self.seed).into_bytes(),
        }
    }

    fn start_install(&mut self, now: u64, node: &str, cause: &str) -> bool {
        let before = self.phase(node);
        let allowed = match before {
            Phase::BaseInstalling => false,
            p => p.can_transition_to(Phase::BaseInstalling),
        };
        if !allowed {
            self.log(now, "install_rejected", format!("node={node} phase={before} cause={cause}"));
            return false;
        }
        self.batch_remove(now, node, cause);
        let _ = self.notify.disconnect(node);
        let epoch = match self.keys.rekey(node, now) {
            Ok(pair) => pair.install_epoch,
            Err(e) => {
                self.log(now, "install_rejected", format!("node={node} reason={}", e.code()));
                return false;
            }
        };
        for label in ["root_password", "ssh_host_key"] {
            let payload = self.secret_payload(node, label, epoch);
            self.keys
                .encrypt_secret(node, label, &payload)
                .expect("node key was just generated");
        }
        match self.keys.open_window(node, now, self.window) {
            Ok(w) => self.log(now, "key_window", format!("node={node} opens={} closes={}", w.opens_at, w.closes_at)),
            Err(e) => self.log(now, "key_window_kept", format!("node={node} reason={}", e.code())),
        }
        let sn = self.nodes.get_mut(node).unwrap();
        sn.key = None;
        let spec = sn.spec.clone();
        sn.agent
            .start_base_install(&spec)
            .expect("phase was checked above");
        let install = sn.agent.installs();
        self.stats.installs_started += 1;
        self.log(now, "install_start", format!("node={node} method=pxe epoch={epoch} cause={cause}"));
        self.log_phase(now, node, before, cause);
        let t = now + self.lat();
        self.push(t, Event::KeyFetch { node: node.to_string(), install });
        let t = now + self.timing.base_install + self.lat();
        self.push(t, Event::BaseDone { node: node.to_string(), install });
        true
    }

    fn is_current(&self, node: &str, install: u64, phase: Phase) -> bool {
        let agent = &self.nodes[node].agent;
        agent.installs() == install && agent.phase() == phase
    }

    fn key_fetch(&mut self, now: u64, node: &str, install: u64) {
        if !self.is_current(node, install, Phase::BaseInstalling) {
            return;
        }
        if self.route(now, node, Service::Keys).is_err() {
            self.log(now, "key_fetch_failed", format!("node={node} reason=all-replicas-down"));
            return;
        }
        match self.keys.fetch_private_key(node, now) {
            Ok(key) => {
                self.log(now, "key_fetched", format!("node={node} epoch={}", key.epoch));
                self.nodes.get_mut(node).unwrap().key = Some(key);
            }
            Err(e) => self.log(now, "key_fetch_failed", format!("node={node} reason={}", e.code())),
        }
    }

    fn base_done(&mut self, now: u64, node: &str, install: u64) {
        if !self.is_current(node, install, Phase::BaseInstalling) {
            return;
        }
        let before = self.phase(node);
        self.nodes
            .get_mut(node)
            .unwrap()
            .agent
            .complete_base_install()
            .expect("node is base installing");
        self.log(now, "base_done", format!("node={node}"));
        self.log_phase(now, node, before, "install");
        let t = now + self.timing.boot + self.lat();
        self.push(t, Event::BootDone { node: node.to_string(), install });
    }

    /// First boot. Returns false if the event was stale.
    fn boot_done(&mut self, now: u64, node: &str, install: u64) -> bool {
        if !self.is_current(node, install, Phase::AwaitingFirstBoot) {
            return false;
        }
        let before = self.phase(node);
        let key = self.nodes[node].key.clone();
        let fetched = match &key {
            Some(_) => self.fetch_profile(now, node, true),
            None => Err("no node key".to_string()),
        };
        let sn = self.nodes.get_mut(node).unwrap();
        let mut source = move |_: &str| fetched.clone();
        let outcome = sn.agent.first_boot(&mut source, &self.registry);
        match outcome {
            Err(e) => {
                self.stats.install_failures += 1;
                self.log(now, "hook_failed", format!("node={node} error={}", token(&e.to_string())));
                self.log_phase(now, node, before, "install");
                return true;
            }
            Ok(BootOutcome::FirstBoot { failures }) => {
                let generation = self.nodes[node].agent.package_generation().unwrap_or(0);
                self.stats.reconciles += 1;
                self.log(now, "reconcile", format!("node={node} gen={generation} cause=install"));
                for f in failures {
                    self.log(
                        now,
                        "component_failed",
                        format!("node={node} component={} error={}", f.component, token(&f.message)),
                    );
                }
            }
            Ok(BootOutcome::Reboot) => unreachable!("first_boot never reports a plain reboot"),
        }
        if let Some(key) = key {
            let blobs: Vec<_> = self.keys.secrets_for(node).cloned().collect();
            for blob in blobs {
                match self.keys.decrypt_secret(&key, &blob) {
                    Ok(payload) => self.nodes.get_mut(node).unwrap().agent.install_secret(&blob.label, payload),
                    Err(e) => self.log(now, "secret_failed", format!("node={node} label={} reason={}", blob.label, e.code())),
                }
            }
        }
        self.notify.connect(node);
        for tag in [PACKAGE_TAG, CONFIG_TAG] {
            if let Ok((_, true)) = self.notify.subscribe(node, tag, now) {
                self.log(now, "subscribe", format!("node={node} tag={tag}"));
            }
        }
        if self.notify.pending(node) > 0 {
            let t = now + self.lat();
            self.push(t, Event::Deliver { client: node.to_string() });
        }
        self.log_phase(now, node, before, "install");
        if self.phase(node) == Phase::Production {
            self.stats.installs_completed += 1;
            let generation = self.nodes[node].agent.applied_generation().unwrap_or(0);
            self.log(now, "production", format!("node={node} gen={generation}"));
            if self.nodes[node].decl.kind == NodeKind::Batch {
                let slots = self.nodes[node].decl.slots;
                if self.batch.add_host(node, slots).is_ok() {
                    self.log(now, "host_add", format!("host={node} slots={slots}"));
                    self.batch_tick(now);
                }
            }
        } else {
            self.stats.install_failures += 1;
        }
        true
    }

    fn batch_tick(&mut self, now: u64) {
        let result = self.batch.tick(now);
        for id in result.completed {
            let host = match &self.batch.job(id).unwrap().state {
                crate::batch::JobState::Done { host, .. } => host.clone(),
                _ => String::new(),
            };
            self.log(now, "job_done", format!("job={id} host={host}"));
        }
        for a in result.assigned {
            self.log(now, "assign", format!("job={} group={} host={}", a.job, a.group, a.host));
        }
        if !self.batch.is_work_conserving() {
            self.violation(now, "free open slot left while jobs pending".into());
        }
        if !self.batch.jobs_conserved() {
            self.violation(now, "job accounting does not add up".into());
        }
        if let Some(next) = self.batch.next_completion() {
            if self.batch_wakes.insert(next) {
                self.push(next, Event::BatchWake);
            }
        }
    }

    fn batch_remove(&mut self, now: u64, node: &str, cause: &str) {
        if self.batch.host(node).is_none() {
            return;
        }
        self.batch_tick(now);
        let lost = self.batch.remove_host(node, now).expect("host exists");
        self.log(now, "host_remove", format!("host={node} cause={cause}"));
        for id in lost {
            self.log(now, "requeue", format!("job={id} host={node} reason=new"));
        }
        self.batch_tick(now);
    }

    fn raise_alarm(&mut self, now: u64, node: &str, condition: &str) {
        match self.monitor.raise_alarm(node, condition, now) {
            AlarmOutcome::Raised => {
                self.stats.alarms += 1;
                self.log(now, "alarm", format!("node={node} condition={}", token(condition)));
            }
            AlarmOutcome::Suppressed => {
                self.stats.suppressed_alarms += 1;
                self.log(now, "alarm_suppressed", format!("node={node} condition={}", token(condition)));
            }
        }
    }

    fn node_fail(&mut self, now: u64, node: &str) -> bool {
        let before = self.phase(node);
        if self.nodes.get_mut(node).unwrap().agent.fail().is_err() {
            self.log(now, "fail_ignored", format!("node={node} phase={before}"));
            return false;
        }
        self.log(now, "node_fail", format!("node={node}"));
        self.log_phase(now, node, before, "fail");
        self.batch_remove(now, node, "fail");
        let _ = self.notify.disconnect(node);
        self.raise_alarm(now, node, "node_down");
        true
    }

    fn deliver(&mut self, now: u64, client: &str) {
        if !self.notify.is_connected(client) {
            return;
        }
        let events = match self.notify.deliver(client) {
            Ok(e) if !e.is_empty() => e,
            _ => return,
        };
        let fresh = self.nodes.get_mut(client).unwrap().client.accept(&events);
        let fresh_keys: BTreeSet<(String, u64)> = fresh.iter().map(|e| (e.tag.to_string(), e.seq)).collect();
        let mut acks: BTreeMap<String, u64> = BTreeMap::new();
        for e in &events {
            self.stats.deliveries += 1;
            let kind = if fresh_keys.contains(&(e.tag.to_string(), e.seq)) {
                "deliver"
            } else {
                self.stats.duplicates += 1;
                "duplicate"
            };
            self.log(now, kind, format!("node={client} tag={} seq={}", e.tag, e.seq));
            let ack = acks.entry(e.tag.to_string()).or_insert(0);
            *ack = (*ack).max(e.seq);
        }
        for e in &fresh {
            match e.tag.as_str() {
                PACKAGE_TAG => self.reconcile(now, client, PACKAGE_TAG),
                CONFIG_TAG => self.configure(now, client, CONFIG_TAG),
                _ => {}
            }
        }
        for (tag, seq) in acks {
            let _ = self.notify.ack(client, &tag, seq);
        }
    }

    fn reconcile(&mut self, now: u64, node: &str, cause: &str) {
        let profile = match self.fetch_profile(now, node, true) {
            Ok(p) => p,
            Err(e) => {
                self.log(now, "reconcile_failed", format!("node={node} error={}", token(&e)));
                return;
            }
        };
        match self.nodes.get_mut(node).unwrap().agent.reconcile_packages(&profile) {
            Ok(plan) => {
                self.stats.reconciles += 1;
                self.log(
                    now,
                    "reconcile",
                    format!("node={node} gen={} actions={} cause={cause}", profile.generation, plan.len()),
                );
            }
            Err(e) => self.log(now, "reconcile_failed", format!("node={node} error={}", token(&e.to_string()))),
        }
    }

    fn configure(&mut self, now: u64, node: &str, cause: &str) {
        let profile = match self.fetch_profile(now, node, false) {
            Ok(p) => p,
            Err(e) => {
                self.log(now, "configure_failed", format!("node={node} error={}", token(&e)));
                return;
            }
        };
        let sn = self.nodes.get_mut(node).unwrap();
        if !matches!(
            sn.agent.phase(),
            Phase::Configuring | Phase::Production | Phase::Draining | Phase::Intervention
        ) {
            self.log(now, "configure_skipped", format!("node={node}"));
            return;
        }
        let before = sn.agent.phase();
        let failures = sn.agent.run_components(&profile, &self.registry);
        self.log(
            now,
            "configure",
            format!("node={node} gen={} failures={} cause={cause}", profile.generation, failures.len()),
        );
        self.log_phase(now, node, before, cause);
    }

    fn finish_action(&mut self, now: u64, node: &str, action: RundownAction) {
        if self.phase(node) != Phase::Intervention {
            self.log(now, "action_skipped", format!("node={node} action={action}"));
            return;
        }
        let before = self.phase(node);
        match action {
            RundownAction::KernelUpdate => {
                let result = self
                    .fetch_profile(now, node, true)
                    .and_then(|p| {
                        self.nodes
                            .get_mut(node)
                            .unwrap()
                            .agent
                            .kernel_update(&p)
                            .map_err(|e| e.to_string())
                    });
                match result {
                    Ok(plan) => self.log(now, "kernel_update", format!("node={node} actions={}", plan.len())),
                    Err(e) => {
                        self.log(now, "kernel_update_failed", format!("node={node} error={}", token(&e)));
                        let _ = self.nodes.get_mut(node).unwrap().agent.reboot();
                    }
                }
            }
            _ => {
                let _ = self.nodes.get_mut(node).unwrap().agent.reboot();
                self.log(now, "reboot", format!("node={node}"));
            }
        }
        self.log_phase(now, node, before, "rundown");
    }

    fn edit(&mut self, now: u64, template: &str, statement: &str) {
        let parsed = match parse_statement(statement) {
            Ok(s) => s,
            Err(e) => {
                self.log(now, "edit_rejected", format!("template={template} error={}", token(&e.to_string())));
                return;
            }
        };
        let Some(t) = self.templates.get_mut(template) else {
            self.log(now, "edit_rejected", format!("template={template} error=unknown_template"));
            return;
        };
        t.statements.push(parsed);
        let saved = self.repo.clone();
        match self.repo.recompile_all(&self.templates, None) {
            Ok(changed) => self.log(now, "edit", format!("template={template} changed={}", changed.len())),
            Err(e) => {
                self.repo = saved;
                self.templates.get_mut(template).unwrap().statements.pop();
                self.log(now, "edit_rejected", format!("template={template} error={}", token(&e.to_string())));
            }
        }
    }

    /// Reinstalls a copy of every settled production node at its own
    /// generation and compares digests.
    fn checkpoint(&mut self, now: u64) {
        let mut checked = 0;
        let mut mismatches = 0;
        let names: Vec<String> = self.nodes.keys().cloned().collect();
        for name in names {
            let sn = &self.nodes[&name];
            if sn.agent.phase() != Phase::Production || !sn.agent.is_settled() {
                continue;
            }
            let generation = sn.agent.applied_generation().unwrap();
            let Some(profile) = self.repo.at_generation(&name, generation) else {
                continue;
            };
            let live = sn.agent.state_digest();
            let fresh = simulate_reinstall(&sn.agent, &sn.spec, profile, &self.registry)
                .map(|n| n.state_digest())
                .unwrap_or_default();
            checked += 1;
            let matched = live == fresh;
            self.log(
                now,
                "digest",
                format!("node={name} gen={generation} digest={} match={matched}", &live[..16]),
            );
            if !matched {
                mismatches += 1;
                self.violation(now, format!("reinstall of {name} at generation {generation} changes its digest"));
            }
        }
        self.stats.digests_checked += checked;
        self.stats.digest_mismatches += mismatches;
        self.log(now, "checkpoint", format!("nodes={checked} mismatches={mismatches}"));
    }
}

impl RundownEnv for World {
    fn in_production(&self, node: &str) -> bool {
        self.nodes.get(node).is_some_and(|n| n.agent.phase() == Phase::Production)
    }

    fn close_host(&mut self, node: &str, now: u64) {
        if self.batch.close_host(node).is_ok() {
            self.log(now, "host_close", format!("host={node}"));
        }
        self.set_phase(now, node, Phase::Draining, "rundown");
    }

    fn open_host(&mut self, node: &str, now: u64) {
        if self.batch.open_host(node).is_ok() {
            self.log(now, "host_open", format!("host={node}"));
        }
        if self.phase(node) == Phase::Draining {
            self.set_phase(now, node, Phase::Production, "rundown");
        }
        self.batch_tick(now);
    }

    fn running_jobs(&self, node: &str) -> u32 {
        self.batch.host(node).map_or(0, |h| h.running().len() as u32)
    }

    fn disable_logins(&mut self, node: &str, now: u64) {
        self.nodes.get_mut(node).unwrap().logins_enabled = false;
        self.log(now, "logins_disabled", format!("node={node}"));
        self.set_phase(now, node, Phase::Draining, "rundown");
    }

    fn enable_logins(&mut self, node: &str, now: u64) {
        self.nodes.get_mut(node).unwrap().logins_enabled = true;
        self.log(now, "logins_enabled", format!("node={node}"));
        if self.phase(node) == Phase::Draining {
            self.set_phase(now, node, Phase::Production, "rundown");
        }
    }

    fn logged_in_users(&self, node: &str) -> u32 {
        self.nodes[node].users
    }

    fn set_muted(&mut self, node: &str, muted: bool, now: u64) {
        self.monitor.mute(node, muted);
        self.log(now, if muted { "mute" } else { "unmute" }, format!("node={node}"));
    }

    fn operator_notice(&mut self, node: &str, message: &str, now: u64) {
        self.log(now, "notice", format!("node={node} msg={}", token(message)));
    }

    fn begin_action(&mut self, node: &str, action: RundownAction, now: u64) {
        self.log(now, "action_start", format!("node={node} action={action}"));
        let users = self.nodes[node].users;
        if users > 0 {
            self.log(now, "logout_forced", format!("node={node} users={users}"));
            self.nodes.get_mut(node).unwrap().users = 0;
        }
        self.set_phase(now, node, Phase::Intervention, "rundown");
        match action {
            RundownAction::Reboot => {
                let t = now + self.timing.reboot;
                self.push(t, Event::ActionDone { node: node.to_string(), action });
            }
            RundownAction::KernelUpdate => {
                let t = now + self.timing.kernel_update;
                self.push(t, Event::ActionDone { node: node.to_string(), action });
            }
            RundownAction::Reinstall => {
                self.start_install(now, node, "rundown");
            }
        }
    }
}

/// A deterministic run of one scenario.
pub struct Simulation {
    world: World,
    rundowns: RundownCoordinator,
    clock: u64,
}

impl Simulation {
    pub fn new(scenario: &Scenario, seed: u64) -> Result<Self, SimError> {
        let templates = site::site_templates(&scenario.nodes)?;
        let mut repo = ProfileRepository::new();
        repo.recompile_all(&templates, None)?;
        let groups: Vec<(&str, f64)> = if scenario.groups.is_empty() {
            vec![("default", 1.0)]
        } else {
            scenario.groups.iter().map(|(n, s)| (n.as_str(), *s)).collect()
        };
        let mut config = BatchConfig::default();
        if let Some(h) = scenario.half_life {
            config.half_life = h;
        }
        if let Some(m) = scenario.max_runtime {
            config.max_runtime = m;
        }
        let nodes = scenario
            .nodes
            .iter()
            .map(|d| {
                let node = SimNode {
                    decl: d.clone(),
                    spec: site::install_spec(d.kind),
                    agent: VirtualNode::new(d.name.clone()),
                    key: None,
                    users: 0,
                    logins_enabled: true,
                    client: NotifyClient::new(),
                };
                (d.name.clone(), node)
            })
            .collect();
        let mut world = World {
            nodes,
            templates,
            repo,
            registry: ComponentRegistry::standard(),
            replicas: ReplicaSet::new(&scenario.replicas),
            keys: KeyServer::with_seed(seed),
            notify: NotifyServer::new(),
            batch: BatchScheduler::new(config, &groups)?,
            monitor: Monitor::new(scenario.alarm_rules.clone()),
            rng: ChaCha8Rng::seed_from_u64(seed),
            seed,
            timing: scenario.timing,
            latency: scenario.latency,
            window: scenario.window.unwrap_or(DEFAULT_WINDOW_SECS),
            queue: BTreeMap::new(),
            seq: 0,
            batch_wakes: BTreeSet::new(),
            deadlines: BTreeSet::new(),
            trace: Vec::new(),
            violations: Vec::new(),
            stats: SimStats::default(),
        };
        let mut events: Vec<_> = scenario.events.iter().collect();
        events.sort_by_key(|e| e.at);
        for e in events {
            world.push(e.at, Event::Command(e.command.clone()));
        }
        Ok(Self {
            world,
            rundowns: RundownCoordinator::new(None),
            clock: 0,
        })
    }

    /// Parses and runs `scenario` up to and including time `until`.
    pub fn run(scenario: &Scenario, seed: u64, until: u64) -> Result<(Self, SimOutcome), SimError> {
        let mut sim = Self::new(scenario, seed)?;
        let outcome = sim.run_until(until);
        Ok((sim, outcome))
    }

    /// Processes every event at or before `until`.
    pub fn run_until(&mut self, until: u64) -> SimOutcome {
        while let Some(entry) = self.world.queue.first_entry() {
            let (at, _) = *entry.key();
            if at > until {
                break;
            }
            let event = entry.remove();
            self.clock = at;
            self.world.stats.events += 1;
            self.handle(at, event);
        }
        self.clock = self.clock.max(until);
        let mut violations = self.world.violations.clone();
        violations.extend(invariants::check_trace(&self.world.trace));
        SimOutcome {
            trace: self.world.trace.clone(),
            violations,
            stats: self.world.stats.clone(),
            end_time: self.clock,
        }
    }

    fn handle(&mut self, now: u64, event: Event) {
        match event {
            Event::Command(c) => self.command(now, c),
            Event::KeyFetch { node, install } => self.world.key_fetch(now, &node, install),
            Event::BaseDone { node, install } => self.world.base_done(now, &node, install),
            Event::BootDone { node, install } => {
                if self.world.boot_done(now, &node, install) && self.acting(&node) == Some(RundownAction::Reinstall) {
                    self.complete_action(now, &node);
                }
            }
            Event::Deliver { client } => self.world.deliver(now, &client),
            Event::BatchWake => {
                self.world.batch_wakes.remove(&now);
                self.world.batch_tick(now);
            }
            Event::RundownDeadline => {
                self.world.deadlines.remove(&now);
            }
            Event::ActionDone { node, action } => {
                if self.acting(&node) == Some(action) {
                    self.world.finish_action(now, &node, action);
                    self.complete_action(now, &node);
                }
            }
        }
        if self.rundowns.active().next().is_some() {
            self.rundowns.poll(&mut self.world, now);
            if let Some(d) = self.rundowns.next_deadline() {
                if self.world.deadlines.insert(d) {
                    self.world.push(d, Event::RundownDeadline);
                }
            }
        }
    }

    fn acting(&self, node: &str) -> Option<RundownAction> {
        self.rundowns
            .state(node)
            .filter(|s| s.phase == DrainPhase::Acting)
            .map(|s| s.plan.action)
    }

    fn complete_action(&mut self, now: u64, node: &str) {
        if let Ok((state, _)) = self.rundowns.on_action_complete(node, &mut self.world, now) {
            let phase = self.world.phase(node);
            self.world.log(
                now,
                "rundown_done",
                format!("node={node} action={} phase={phase}", state.plan.action),
            );
        }
    }

    fn start_rundown(&mut self, now: u64, node: &str, action: RundownAction, grace: Option<u64>) {
        let kind = match self.world.nodes[node].decl.kind {
            NodeKind::Interactive => rundown::NodeKind::Interactive,
            NodeKind::Batch | NodeKind::Disk => rundown::NodeKind::Batch,
        };
        let grace = match kind {
            rundown::NodeKind::Interactive => grace.or(Some(DEFAULT_GRACE)),
            rundown::NodeKind::Batch => grace,
        };
        let plan = RundownPlan {
            node: node.to_string(),
            node_kind: kind,
            action,
            grace,
            requested_at: now,
        };
        self.world.log(now, "rundown_request", format!("node={node} action={action}"));
        if let Err(e) = self.rundowns.start_rundown(plan, &mut self.world) {
            self.world
                .log(now, "rundown_rejected", format!("node={node} reason={}", token(&e.to_string())));
        }
    }

    fn command(&mut self, now: u64, command: Command) {
        let w = &mut self.world;
        match command {
            Command::Install(target) => {
                let names: Vec<String> = match target {
                    Some(n) => vec![n],
                    None => w.nodes.keys().cloned().collect(),
                };
                for n in names {
                    w.start_install(now, &n, "install");
                }
            }
            Command::Reinstall(n) => {
                w.start_install(now, &n, "reinstall");
            }
            Command::Submit { group, runtime, count } => {
                for _ in 0..count {
                    match w.batch.submit(&group, runtime, now) {
                        Ok(id) => w.log(now, "submit", format!("job={id} group={group} runtime={runtime}")),
                        Err(e) => w.log(now, "submit_rejected", format!("group={group} error={}", token(&e.to_string()))),
                    }
                }
                w.batch_tick(now);
            }
            Command::Fail(target) => {
                if w.replicas.contains(&target) {
                    w.replicas.set_alive(&target, false).expect("replica exists");
                    w.log(now, "replica_fail", format!("replica={target}"));
                } else if w.node_fail(now, &target) {
                    match self.rundowns.state(&target).map(|s| s.phase) {
                        Some(DrainPhase::Acting) => self.complete_action(now, &target),
                        Some(_) if self.rundowns.abort_rundown(&target, &mut self.world, now).is_ok() => {
                            self.world.log(now, "rundown_aborted", format!("node={target} cause=fail"));
                        }
                        _ => {}
                    }
                }
            }
            Command::Recover(target) => {
                w.replicas.set_alive(&target, true).expect("replica exists");
                w.log(now, "replica_recover", format!("replica={target}"));
            }
            Command::Rundown { node, action, grace } => self.start_rundown(now, &node, action, grace),
            Command::RundownCluster {
                cluster,
                action,
                grace,
                max_parallel,
            } => {
                self.rundowns.set_max_parallel(max_parallel);
                let members: Vec<String> = w
                    .nodes
                    .values()
                    .filter(|n| n.decl.cluster == cluster)
                    .map(|n| n.decl.name.clone())
                    .collect();
                for n in members {
                    self.start_rundown(now, &n, action, grace);
                }
            }
            Command::AbortRundown(node) => match self.rundowns.abort_rundown(&node, &mut self.world, now) {
                Ok(_) => self.world.log(now, "rundown_aborted", format!("node={node} cause=operator")),
                Err(e) => self
                    .world
                    .log(now, "abort_rejected", format!("node={node} reason={}", token(&e.to_string()))),
            },
            Command::Notify(tag) => match w.notify.notify(&tag, now) {
                Ok((event, fanout)) => {
                    w.log(now, "notify", format!("tag={tag} seq={} fanout={fanout}", event.seq));
                    for client in w.notify.subscribers(&tag) {
                        if w.notify.is_connected(&client) {
                            let t = now + w.lat();
                            w.push(t, Event::Deliver { client });
                        }
                    }
                }
                Err(e) => w.log(now, "notify_rejected", format!("error={}", token(&e.to_string()))),
            },
            Command::Edit { template, statement } => w.edit(now, &template, &statement),
            Command::Login { node, users } => {
                let sn = w.nodes.get_mut(&node).unwrap();
                if !sn.logins_enabled && users > sn.users {
                    w.log(now, "login_refused", format!("node={node}"));
                } else {
                    sn.users = users;
                    w.log(now, "login", format!("node={node} users={users}"));
                }
            }
            Command::Metric { node, name, value } => {
                let tripped = w.monitor.record_metric(&node, &name, value, now);
                w.log(now, "metric", format!("node={node} name={name} value={value}"));
                for condition in tripped {
                    w.raise_alarm(now, &node, &condition);
                }
            }
            Command::Alarm { node, condition } => w.raise_alarm(now, &node, &condition),
            Command::Checkpoint => w.checkpoint(now),
        }
    }

    pub fn clock(&self) -> u64 {
        self.clock
    }

    pub fn node(&self, name: &str) -> Option<&VirtualNode> {
        self.world.nodes.get(name).map(|n| &n.agent)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &VirtualNode> {
        self.world.nodes.values().map(|n| &n.agent)
    }

    pub fn profiles(&self) -> &ProfileRepository {
        &self.world.repo
    }

    pub fn templates(&self) -> &TemplateSet {
        &self.world.templates
    }

    pub fn batch(&self) -> &BatchScheduler {
        &self.world.batch
    }

    pub fn monitor(&self) -> &Monitor {
        &self.world.monitor
    }

    pub fn rundowns(&self) -> &RundownCoordinator {
        &self.rundowns
    }

    pub fn keys(&self) -> &KeyServer {
        &self.world.keys
    }

    pub fn notify_server(&self) -> &NotifyServer {
        &self.world.notify
    }

    pub fn replicas(&self) -> &ReplicaSet {
        &self.world.replicas
    }

    pub fn count_in_phase(&self, phase: Phase) -> usize {
        self.nodes().filter(|n| n.phase() == phase).count()
    }

    pub fn status_nodes(&self) -> String {
        let mut out = format!("{:<16} {:<20} {:>4} {:>6} {:>8}\n", "node", "phase", "gen", "boots", "installs");
        for n in self.nodes() {
            let _ = writeln!(
                out,
                "{:<16} {:<20} {:>4} {:>6} {:>8}",
                n.name(),
                n.phase().as_str(),
                n.applied_generation().map_or("-".to_string(), |g| g.to_string()),
                n.state().boot_count,
                n.installs()
            );
        }
        out
    }

    pub fn status_alarms(&self) -> String {
        let mut out = format!("{:<16} {:<24} {:>10} {:>5}\n", "node", "condition", "raised_at", "ack");
        for a in self.monitor().alarms() {
            let _ = writeln!(
                out,
                "{:<16} {:<24} {:>10} {:>5}",
                a.node, a.condition, a.raised_at, a.acknowledged
            );
        }
        let _ = writeln!(out, "suppressed while muted: {}", self.monitor().suppressed());
        out
    }

    pub fn status_rundowns(&self) -> String {
        let mut out = format!(
            "{:<16} {:<14} {:<9} {:>8} {:>10} {:>10} {:>10}\n",
            "node", "action", "phase", "blocking", "requested", "acting", "finished"
        );
        let fmt_t = |t: Option<u64>| t.map_or("-".to_string(), |t| t.to_string());
        for s in self.rundowns.history().iter().chain(self.rundowns.active()) {
            let _ = writeln!(
                out,
                "{:<16} {:<14} {:<9} {:>8} {:>10} {:>10} {:>10}",
                s.plan.node,
                s.plan.action.as_str(),
                s.phase.as_str(),
                s.blocking,
                s.plan.requested_at,
                fmt_t(s.acting_at),
                fmt_t(s.finished_at)
            );
        }
        out
    }

    pub fn status_batch(&self) -> String {
        self.world.batch.report(self.clock).render()
    }
}
