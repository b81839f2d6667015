use std::collections::BTreeSet;

use super::scenario::AlarmRule;

#[derive(Debug, Clone, PartialEq)]
pub struct MetricSample {
    pub node: String,
    pub metric: String,
    pub value: f64,
    pub at: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Alarm {
    pub node: String,
    pub condition: String,
    pub raised_at: u64,
    pub acknowledged: bool,
}

/// Append-only metric store plus alarm list. Alarms are only ever recorded
/// for operators; nothing reacts to them automatically.
#[derive(Debug, Clone, Default)]
pub struct Monitor {
    samples: Vec<MetricSample>,
    alarms: Vec<Alarm>,
    rules: Vec<AlarmRule>,
    muted: BTreeSet<String>,
    suppressed: u64,
}

/// Result of raising an alarm.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlarmOutcome {
    Raised,
    Suppressed,
}

impl Monitor {
    pub fn new(rules: Vec<AlarmRule>) -> Self {
        Self {
            rules,
            ..Default::default()
        }
    }

    pub fn mute(&mut self, node: &str, muted: bool) {
        if muted {
            self.muted.insert(node.to_string());
        } else {
            self.muted.remove(node);
        }
    }

    pub fn is_muted(&self, node: &str) -> bool {
        self.muted.contains(node)
    }

    /// Stores the sample and returns the conditions of any rules it trips.
    pub fn record_metric(&mut self, node: &str, metric: &str, value: f64, at: u64) -> Vec<String> {
        self.samples.push(MetricSample {
            node: node.to_string(),
            metric: metric.to_string(),
            value,
            at,
        });
        self.rules
            .iter()
            .filter(|r| r.metric == metric && value > r.above)
            .map(|r| format!("{}_above_{}", r.metric, r.above))
            .collect()
    }

    pub fn raise_alarm(&mut self, node: &str, condition: &str, at: u64) -> AlarmOutcome {
        if self.is_muted(node) {
            self.suppressed += 1;
            return AlarmOutcome::Suppressed;
        }
        self.alarms.push(Alarm {
            node: node.to_string(),
            condition: condition.to_string(),
            raised_at: at,
            acknowledged: false,
        });
        AlarmOutcome::Raised
    }

    pub fn acknowledge(&mut self, index: usize) -> bool {
        match self.alarms.get_mut(index) {
            Some(a) => {
                a.acknowledged = true;
                true
            }
            None => false,
        }
    }

    pub fn samples(&self) -> &[MetricSample] {
        &self.samples
    }

    pub fn alarms(&self) -> &[Alarm] {
        &self.alarms
    }

    pub fn suppressed(&self) -> u64 {
        self.suppressed
    }
}
