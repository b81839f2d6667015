use std::cmp::Ordering;
use std::fmt;

use super::spec::{DesiredList, InstalledSet, PackageKey, PackageSpec};
use super::version::plan_order;
use super::PackageError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Action {
    Remove(PackageSpec),
    Downgrade { from: PackageSpec, to: PackageSpec },
    Upgrade { from: PackageSpec, to: PackageSpec },
    Install(PackageSpec),
}

impl Action {
    pub fn key(&self) -> PackageKey {
        match self {
            Action::Remove(s) | Action::Install(s) => s.key(),
            Action::Downgrade { to, .. } | Action::Upgrade { to, .. } => to.key(),
        }
    }

    pub fn code(&self) -> char {
        match self {
            Action::Remove(_) => 'R',
            Action::Downgrade { .. } => 'D',
            Action::Upgrade { .. } => 'U',
            Action::Install(_) => 'I',
        }
    }

    fn rank(&self) -> u8 {
        match self {
            Action::Remove(_) => 0,
            Action::Downgrade { .. } => 1,
            Action::Upgrade { .. } => 2,
            Action::Install(_) => 3,
        }
    }
}

impl fmt::Display for Action {
    /// `R|D|U|I name old→new`, with `-` for the absent side.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (name, old, new) = match self {
            Action::Remove(s) => (&s.name, s.evr(), "-".to_string()),
            Action::Install(s) => (&s.name, "-".to_string(), s.evr()),
            Action::Downgrade { from, to } | Action::Upgrade { from, to } => (&to.name, from.evr(), to.evr()),
        };
        write!(f, "{} {} {}→{}", self.code(), name, old, new)
    }
}

/// Actions turning an installed set into a desired list, in execution order:
/// removes, downgrades, upgrades, installs, each by name then arch.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ReconcilePlan {
    pub actions: Vec<Action>,
}

impl ReconcilePlan {
    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn render(&self) -> String {
        self.actions.iter().map(|a| format!("{a}\n")).collect()
    }
}

/// Computes the plan that makes `installed` exactly `desired`. Packages not
/// in the desired list are removed.
pub fn plan(desired: &DesiredList, installed: &InstalledSet) -> ReconcilePlan {
    let wanted = &desired.packages;
    let mut actions = Vec::new();
    for have in installed.iter() {
        match wanted.get(&have.key()) {
            None => actions.push(Action::Remove(have.clone())),
            Some(want) => match plan_order(want, have) {
                Ordering::Less => actions.push(Action::Downgrade { from: have.clone(), to: want.clone() }),
                Ordering::Greater => actions.push(Action::Upgrade { from: have.clone(), to: want.clone() }),
                Ordering::Equal => {}
            },
        }
    }
    for want in wanted.iter() {
        if installed.get(&want.key()).is_none() {
            actions.push(Action::Install(want.clone()));
        }
    }
    // stable sort keeps key order within each class
    actions.sort_by_key(Action::rank);
    ReconcilePlan { actions }
}

/// Applies `plan` to a copy of `installed`. All-or-nothing: if any action's
/// precondition does not hold the input is left untouched and the stale
/// action is reported.
pub fn apply(plan: &ReconcilePlan, installed: &InstalledSet) -> Result<InstalledSet, PackageError> {
    let mut next = installed.clone();
    for action in &plan.actions {
        let stale = || PackageError::StalePlan(action.to_string());
        match action {
            Action::Remove(spec) => {
                if !next.contains(spec) {
                    return Err(stale());
                }
                next.remove(&spec.key());
            }
            Action::Downgrade { from, to } | Action::Upgrade { from, to } => {
                if !next.contains(from) {
                    return Err(stale());
                }
                next.put(to.clone());
            }
            Action::Install(spec) => {
                if next.get(&spec.key()).is_some() {
                    return Err(stale());
                }
                next.put(spec.clone());
            }
        }
    }
    Ok(next)
}
