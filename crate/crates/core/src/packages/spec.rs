use std::collections::BTreeMap;
use std::fmt;

use crate::config::{ConfigValue, ProfileTree};

use super::PackageError;

/// Identity of a package within a list: one entry per (name, arch).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PackageKey {
    pub name: String,
    pub arch: String,
}

impl fmt::Display for PackageKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.name, self.arch)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PackageSpec {
    pub name: String,
    pub version: String,
    pub release: String,
    pub arch: String,
}

fn valid_field(s: &str) -> bool {
    !s.is_empty() && !s.chars().any(|c| c.is_whitespace() || c == '#')
}

impl PackageSpec {
    pub fn new(
        name: impl Into<String>,
        version: impl Into<String>,
        release: impl Into<String>,
        arch: impl Into<String>,
    ) -> Result<Self, PackageError> {
        let spec = Self {
            name: name.into(),
            version: version.into(),
            release: release.into(),
            arch: arch.into(),
        };
        for (field, value) in [
            ("name", &spec.name),
            ("version", &spec.version),
            ("release", &spec.release),
            ("arch", &spec.arch),
        ] {
            if !valid_field(value) {
                return Err(PackageError::InvalidSpec(format!("bad {field} `{value}`")));
            }
        }
        if spec.version.contains('-') || spec.release.contains('-') {
            return Err(PackageError::InvalidSpec(format!(
                "version and release may not contain `-`: {}-{}",
                spec.version, spec.release
            )));
        }
        Ok(spec)
    }

    pub fn key(&self) -> PackageKey {
        PackageKey {
            name: self.name.clone(),
            arch: self.arch.clone(),
        }
    }

    /// `version-release.arch`, as shown in plan output.
    pub fn evr(&self) -> String {
        format!("{}-{}.{}", self.version, self.release, self.arch)
    }
}

impl fmt::Display for PackageSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}-{}.{}", self.name, self.version, self.release, self.arch)
    }
}

/// A set of packages with unique (name, arch) keys, kept in key order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct PackageSet {
    entries: BTreeMap<PackageKey, PackageSpec>,
}

impl PackageSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_specs(specs: impl IntoIterator<Item = PackageSpec>) -> Result<Self, PackageError> {
        let mut set = Self::new();
        for spec in specs {
            set.insert(spec)?;
        }
        Ok(set)
    }

    pub fn insert(&mut self, spec: PackageSpec) -> Result<(), PackageError> {
        let key = spec.key();
        if self.entries.contains_key(&key) {
            return Err(PackageError::DuplicateKey(key.to_string()));
        }
        self.entries.insert(key, spec);
        Ok(())
    }

    pub(crate) fn put(&mut self, spec: PackageSpec) {
        self.entries.insert(spec.key(), spec);
    }

    pub(crate) fn remove(&mut self, key: &PackageKey) -> Option<PackageSpec> {
        self.entries.remove(key)
    }

    pub fn get(&self, key: &PackageKey) -> Option<&PackageSpec> {
        self.entries.get(key)
    }

    pub fn contains(&self, spec: &PackageSpec) -> bool {
        self.entries.get(&spec.key()) == Some(spec)
    }

    pub fn iter(&self) -> impl Iterator<Item = &PackageSpec> {
        self.entries.values()
    }

    pub fn keys(&self) -> impl Iterator<Item = &PackageKey> {
        self.entries.keys()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Text form: one `name version release arch` line per package, sorted.
    pub fn render(&self) -> String {
        self.iter()
            .map(|s| format!("{} {} {} {}\n", s.name, s.version, s.release, s.arch))
            .collect()
    }

    /// Parses the text form; `#` starts a comment, blank lines are ignored.
    pub fn parse(text: &str) -> Result<Self, PackageError> {
        let mut set = Self::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split_once('#').map_or(raw, |(l, _)| l).trim();
            if line.is_empty() {
                continue;
            }
            let bad = |message: String| PackageError::MalformedLine { line: i + 1, message };
            let fields: Vec<&str> = line.split_whitespace().collect();
            let [name, version, release, arch] = fields.as_slice() else {
                return Err(bad(format!("expected `name version release arch`, found `{line}`")));
            };
            let spec = PackageSpec::new(*name, *version, *release, *arch).map_err(|e| bad(e.to_string()))?;
            set.insert(spec).map_err(|e| bad(e.to_string()))?;
        }
        Ok(set)
    }
}

/// The configured package list of a node.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DesiredList {
    pub packages: PackageSet,
    /// Profile generation the list was derived from (0 if not from a profile).
    pub source_generation: u64,
}

impl DesiredList {
    pub fn new(packages: PackageSet, source_generation: u64) -> Self {
        Self { packages, source_generation }
    }

    /// Reads `/software/packages` from a profile. Each child record is keyed by
    /// package name and holds `version`, `release` and `arch` strings. A
    /// profile without that path yields an empty list.
    pub fn from_profile(profile: &ProfileTree) -> Result<Self, PackageError> {
        let mut packages = PackageSet::new();
        if let Some(value) = profile.get("/software/packages") {
            let record = value.as_record().ok_or_else(|| {
                PackageError::InvalidSpec("/software/packages must be a record".into())
            })?;
            for (name, entry) in record {
                let field = |f: &str| -> Result<&str, PackageError> {
                    entry
                        .as_record()
                        .and_then(|r| r.get(f))
                        .and_then(ConfigValue::as_str)
                        .ok_or_else(|| {
                            PackageError::InvalidSpec(format!("/software/packages/{name}/{f} must be a string"))
                        })
                };
                packages.insert(PackageSpec::new(name.as_str(), field("version")?, field("release")?, field("arch")?)?)?;
            }
        }
        Ok(Self::new(packages, profile.generation))
    }
}

/// Packages currently present on a node.
pub type InstalledSet = PackageSet;
