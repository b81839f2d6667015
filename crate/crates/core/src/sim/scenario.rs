use std::collections::BTreeSet;
use std::fmt;

use crate::rundown::RundownAction;

use super::replicas::Service;
use super::SimError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum NodeKind {
    Batch,
    Interactive,
    Disk,
}

impl NodeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            NodeKind::Batch => "batch",
            NodeKind::Interactive => "interactive",
            NodeKind::Disk => "disk",
        }
    }

    fn parse(text: &str) -> Option<Self> {
        match text {
            "batch" => Some(NodeKind::Batch),
            "interactive" => Some(NodeKind::Interactive),
            "disk" => Some(NodeKind::Disk),
            _ => None,
        }
    }

    pub fn default_cluster(self) -> &'static str {
        match self {
            NodeKind::Batch => "lxbatch",
            NodeKind::Interactive => "lxplus",
            NodeKind::Disk => "lxdisk",
        }
    }
}

impl fmt::Display for NodeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeDecl {
    pub name: String,
    pub kind: NodeKind,
    pub slots: u32,
    pub cluster: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReplicaDecl {
    pub name: String,
    pub serves: BTreeSet<Service>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlarmRule {
    pub metric: String,
    pub above: f64,
}

/// Durations of the simulated steps, in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Timing {
    pub base_install: u64,
    pub boot: u64,
    pub reboot: u64,
    pub kernel_update: u64,
}

impl Default for Timing {
    fn default() -> Self {
        Self {
            base_install: 600,
            boot: 90,
            reboot: 120,
            kernel_update: 180,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Command {
    /// Install one node, or every declared node.
    Install(Option<String>),
    Reinstall(String),
    Submit { group: String, runtime: u64, count: u32 },
    /// Node or replica.
    Fail(String),
    Recover(String),
    Rundown { node: String, action: RundownAction, grace: Option<u64> },
    RundownCluster { cluster: String, action: RundownAction, grace: Option<u64>, max_parallel: Option<usize> },
    AbortRundown(String),
    Notify(String),
    Edit { template: String, statement: String },
    Login { node: String, users: u32 },
    Metric { node: String, name: String, value: f64 },
    Alarm { node: String, condition: String },
    Checkpoint,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScheduledCommand {
    pub at: u64,
    pub command: Command,
    pub line: usize,
}

/// A declarative simulation scenario.
///
/// ```text
/// replica cfg01
/// replica cfg02 serves=profiles,packages
/// group atlas share=0.6
/// group cms share=0.4
/// node lxb001 kind=batch slots=2
/// nodes lxb 100 kind=batch
/// at 0 install all
/// at 3600 submit atlas 600 count=10
/// at 4000 fail cfg02
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub nodes: Vec<NodeDecl>,
    pub replicas: Vec<ReplicaDecl>,
    pub groups: Vec<(String, f64)>,
    pub half_life: Option<u64>,
    pub max_runtime: Option<u64>,
    pub window: Option<u64>,
    pub latency: (u64, u64),
    pub timing: Timing,
    pub alarm_rules: Vec<AlarmRule>,
    pub events: Vec<ScheduledCommand>,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            nodes: Vec::new(),
            replicas: Vec::new(),
            groups: Vec::new(),
            half_life: None,
            max_runtime: None,
            window: None,
            latency: (1, 5),
            timing: Timing::default(),
            alarm_rules: Vec::new(),
            events: Vec::new(),
        }
    }
}

fn option<'a>(words: &[&'a str], key: &str) -> Option<&'a str> {
    words.iter().find_map(|w| w.strip_prefix(key)?.strip_prefix('='))
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Self, SimError> {
        let mut s = Scenario::default();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = match raw.find('#') {
                // quoted template statements may contain '#'
                Some(pos) if !raw[..pos].contains('\'') => &raw[..pos],
                _ => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| SimError::Parse { line: line_no, message };
            let words: Vec<&str> = line.split_whitespace().collect();
            let num = |w: &str| w.parse::<u64>().map_err(|_| err(format!("bad number `{w}`")));
            let opt_num = |key: &str| -> Result<Option<u64>, SimError> {
                option(&words, key).map(num).transpose()
            };
            match words[0] {
                "node" | "nodes" => {
                    let (names, rest): (Vec<String>, &[&str]) = if words[0] == "node" {
                        let name = words.get(1).ok_or_else(|| err("node needs a name".into()))?;
                        (vec![name.to_string()], &words[2..])
                    } else {
                        let prefix = words.get(1).ok_or_else(|| err("nodes needs a prefix".into()))?;
                        let count = num(words.get(2).ok_or_else(|| err("nodes needs a count".into()))?)?;
                        let width = count.to_string().len().max(3);
                        ((1..=count).map(|n| format!("{prefix}{n:0width$}")).collect(), &words[3..])
                    };
                    let kind_text = option(rest, "kind").ok_or_else(|| err("missing kind=".into()))?;
                    let kind = NodeKind::parse(kind_text).ok_or_else(|| err(format!("unknown kind `{kind_text}`")))?;
                    let slots = match option(rest, "slots") {
                        Some(v) => num(v)? as u32,
                        None => 2,
                    };
                    if slots == 0 {
                        return Err(err("slots must be positive".into()));
                    }
                    let cluster = option(rest, "cluster").unwrap_or(kind.default_cluster()).to_string();
                    for name in names {
                        if !crate::config::is_identifier(&name) {
                            return Err(err(format!("invalid node name `{name}`")));
                        }
                        s.nodes.push(NodeDecl {
                            name,
                            kind,
                            slots,
                            cluster: cluster.clone(),
                        });
                    }
                }
                "replica" => {
                    let name = words.get(1).ok_or_else(|| err("replica needs a name".into()))?;
                    let serves = match option(&words, "serves") {
                        Some(list) => list
                            .split(',')
                            .map(|s| Service::parse(s).ok_or_else(|| err(format!("unknown service `{s}`"))))
                            .collect::<Result<_, _>>()?,
                        None => Service::ALL.into_iter().collect(),
                    };
                    s.replicas.push(ReplicaDecl {
                        name: name.to_string(),
                        serves,
                    });
                }
                "group" => {
                    let name = words.get(1).ok_or_else(|| err("group needs a name".into()))?;
                    let share = option(&words, "share")
                        .and_then(|v| v.parse::<f64>().ok())
                        .ok_or_else(|| err("group needs share=<fraction>".into()))?;
                    s.groups.push((name.to_string(), share));
                }
                "half-life" => s.half_life = Some(num(words.get(1).ok_or_else(|| err("missing value".into()))?)?),
                "max-runtime" => s.max_runtime = Some(num(words.get(1).ok_or_else(|| err("missing value".into()))?)?),
                "window" => s.window = Some(num(words.get(1).ok_or_else(|| err("missing value".into()))?)?),
                "latency" => match words.as_slice() {
                    [_, lo, hi] => {
                        let (lo, hi) = (num(lo)?, num(hi)?);
                        if lo > hi {
                            return Err(err("latency min exceeds max".into()));
                        }
                        s.latency = (lo, hi);
                    }
                    _ => return Err(err("usage: latency <min> <max>".into())),
                },
                "timing" => {
                    if let Some(v) = opt_num("base-install")? {
                        s.timing.base_install = v;
                    }
                    if let Some(v) = opt_num("boot")? {
                        s.timing.boot = v;
                    }
                    if let Some(v) = opt_num("reboot")? {
                        s.timing.reboot = v;
                    }
                    if let Some(v) = opt_num("kernel-update")? {
                        s.timing.kernel_update = v;
                    }
                }
                "alarm-rule" => {
                    let metric = words.get(1).ok_or_else(|| err("alarm-rule needs a metric".into()))?;
                    let above = option(&words, "above")
                        .and_then(|v| v.parse::<f64>().ok())
                        .ok_or_else(|| err("alarm-rule needs above=<value>".into()))?;
                    s.alarm_rules.push(AlarmRule {
                        metric: metric.to_string(),
                        above,
                    });
                }
                "at" => {
                    let at = num(words.get(1).ok_or_else(|| err("at needs a time".into()))?)?;
                    let command = parse_command(line, &words[2..]).map_err(err)?;
                    s.events.push(ScheduledCommand {
                        at,
                        command,
                        line: line_no,
                    });
                }
                other => return Err(err(format!("unknown directive `{other}`"))),
            }
        }
        s.check()?;
        Ok(s)
    }

    /// Cross-references: every event target must be declared.
    fn check(&self) -> Result<(), SimError> {
        let mut names = BTreeSet::new();
        for n in &self.nodes {
            if !names.insert(n.name.as_str()) {
                return Err(SimError::Invalid(format!("duplicate node {}", n.name)));
            }
        }
        let mut replicas = BTreeSet::new();
        for r in &self.replicas {
            if !replicas.insert(r.name.as_str()) || names.contains(r.name.as_str()) {
                return Err(SimError::Invalid(format!("duplicate name {}", r.name)));
            }
        }
        if !self.nodes.is_empty() && self.replicas.is_empty() {
            return Err(SimError::Invalid("at least one replica must be configured".into()));
        }
        let clusters: BTreeSet<&str> = self.nodes.iter().map(|n| n.cluster.as_str()).collect();
        let groups: BTreeSet<&str> = self.groups.iter().map(|g| g.0.as_str()).collect();
        for e in &self.events {
            let bad = |what: &str, name: &str| SimError::Parse {
                line: e.line,
                message: format!("unknown {what} `{name}`"),
            };
            match &e.command {
                Command::Install(Some(n))
                | Command::Reinstall(n)
                | Command::Rundown { node: n, .. }
                | Command::AbortRundown(n)
                | Command::Login { node: n, .. }
                | Command::Metric { node: n, .. }
                | Command::Alarm { node: n, .. } => {
                    if !names.contains(n.as_str()) {
                        return Err(bad("node", n));
                    }
                }
                Command::Fail(t) => {
                    if !names.contains(t.as_str()) && !replicas.contains(t.as_str()) {
                        return Err(bad("target", t));
                    }
                }
                Command::Recover(r) => {
                    if !replicas.contains(r.as_str()) {
                        return Err(bad("replica", r));
                    }
                }
                Command::RundownCluster { cluster, .. } => {
                    if !clusters.contains(cluster.as_str()) {
                        return Err(bad("cluster", cluster));
                    }
                }
                Command::Submit { group, .. } if !groups.contains(group.as_str()) => {
                    return Err(bad("group", group));
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn push(&mut self, at: u64, command: Command) {
        self.events.push(ScheduledCommand { at, command, line: 0 });
    }

    pub fn node(&self, name: &str) -> Option<&NodeDecl> {
        self.nodes.iter().find(|n| n.name == name)
    }
}

/// Parses the command part of an `at <t> ...` line.
pub fn parse_command(line: &str, words: &[&str]) -> Result<Command, String> {
    let num = |w: &str| w.parse::<u64>().map_err(|_| format!("bad number `{w}`"));
    let action = |words: &[&str]| -> Result<RundownAction, String> {
        let a = option(words, "action").ok_or("rundown needs action=")?;
        RundownAction::parse(a).ok_or_else(|| format!("unknown action `{a}`"))
    };
    let grace = |words: &[&str]| option(words, "grace").map(num).transpose();
    match words {
        ["install", "all"] => Ok(Command::Install(None)),
        ["install", node] => Ok(Command::Install(Some(node.to_string()))),
        ["reinstall", node] => Ok(Command::Reinstall(node.to_string())),
        ["submit", group, runtime, rest @ ..] => Ok(Command::Submit {
            group: group.to_string(),
            runtime: num(runtime)?,
            count: option(rest, "count").map(num).transpose()?.unwrap_or(1) as u32,
        }),
        ["fail", target] => Ok(Command::Fail(target.to_string())),
        ["recover", target] => Ok(Command::Recover(target.to_string())),
        ["rundown", node, rest @ ..] => Ok(Command::Rundown {
            node: node.to_string(),
            action: action(rest)?,
            grace: grace(rest)?,
        }),
        ["rundown-cluster", cluster, rest @ ..] => Ok(Command::RundownCluster {
            cluster: cluster.to_string(),
            action: action(rest)?,
            grace: grace(rest)?,
            max_parallel: option(rest, "max-parallel").map(num).transpose()?.map(|n| n as usize),
        }),
        ["abort-rundown", node] => Ok(Command::AbortRundown(node.to_string())),
        ["notify", tag] => Ok(Command::Notify(tag.to_string())),
        ["edit", template, ..] => {
            let statement = line
                .split_once(template)
                .map(|(_, rest)| rest.trim().to_string())
                .filter(|s| !s.is_empty())
                .ok_or("edit needs a statement")?;
            Ok(Command::Edit {
                template: template.to_string(),
                statement,
            })
        }
        ["login", node, users] => Ok(Command::Login {
            node: node.to_string(),
            users: num(users)? as u32,
        }),
        ["metric", node, name, value] => Ok(Command::Metric {
            node: node.to_string(),
            name: name.to_string(),
            value: value.parse().map_err(|_| format!("bad value `{value}`"))?,
        }),
        ["alarm", node, condition] => Ok(Command::Alarm {
            node: node.to_string(),
            condition: condition.to_string(),
        }),
        ["checkpoint"] => Ok(Command::Checkpoint),
        _ => Err(format!("unrecognised command `{}`", words.join(" "))),
    }
}
