//! Checks run over a finished trace. Each returns human-readable violations.

use std::collections::{BTreeMap, BTreeSet};

/// One parsed trace line: time, event kind and its `k=v` fields.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceLine<'a> {
    pub t: u64,
    pub ev: &'a str,
    pub fields: BTreeMap<&'a str, &'a str>,
}

impl<'a> TraceLine<'a> {
    pub fn get(&self, key: &str) -> Option<&'a str> {
        self.fields.get(key).copied()
    }
}

pub fn parse_trace_line(line: &str) -> Option<TraceLine<'_>> {
    let mut t = None;
    let mut ev = None;
    let mut fields = BTreeMap::new();
    for word in line.split(' ') {
        let (k, v) = word.split_once('=')?;
        match k {
            "t" if t.is_none() => t = Some(v.parse().ok()?),
            "ev" if ev.is_none() => ev = Some(v),
            _ => {
                fields.insert(k, v);
            }
        }
    }
    Some(TraceLine { t: t?, ev: ev?, fields })
}

/// Runs every trace-level invariant:
///
/// * no job is assigned to a host that is closed or removed,
/// * nothing in the trace was caused by an alarm,
/// * package reconciles only happen at install or on a package notification.
pub fn check_trace(trace: &[String]) -> Vec<String> {
    let mut out = Vec::new();
    let mut closed = BTreeSet::new();
    for (i, raw) in trace.iter().enumerate() {
        let Some(line) = parse_trace_line(raw) else {
            out.push(format!("line {}: unparseable trace line `{raw}`", i + 1));
            continue;
        };
        if line.get("cause") == Some("alarm") {
            out.push(format!("t={}: {} was triggered by an alarm", line.t, line.ev));
        }
        match line.ev {
            "host_close" | "host_remove" => {
                if let Some(h) = line.get("host") {
                    closed.insert(h);
                }
            }
            "host_open" | "host_add" => {
                if let Some(h) = line.get("host") {
                    closed.remove(h);
                }
            }
            "assign" => {
                if let Some(h) = line.get("host").filter(|h| closed.contains(h)) {
                    out.push(format!("t={}: job {} assigned to closed host {h}", line.t, line.get("job").unwrap_or("?")));
                }
            }
            "reconcile" => {
                let cause = line.get("cause").unwrap_or("none");
                if cause != "install" && cause != "rpmupdate" {
                    out.push(format!("t={}: reconcile on {} with cause {cause}", line.t, line.get("node").unwrap_or("?")));
                }
            }
            _ => {}
        }
    }
    out
}
