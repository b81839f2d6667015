use std::fmt;

use super::compile::{query, ProfileTree};
use super::path::ConfigPath;
use super::template::parse_values;
use super::value::{ConfigValue, ValueKind};
use super::ConfigError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExpectedKind {
    /// Any of string, integer or boolean.
    Scalar,
    Exact(ValueKind),
}

impl ExpectedKind {
    fn accepts(self, kind: ValueKind) -> bool {
        match self {
            ExpectedKind::Scalar => kind.is_scalar(),
            ExpectedKind::Exact(k) => k == kind,
        }
    }
}

impl fmt::Display for ExpectedKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExpectedKind::Scalar => f.write_str("scalar"),
            ExpectedKind::Exact(k) => write!(f, "{k}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SchemaEntry {
    pub path: ConfigPath,
    pub kind: ExpectedKind,
    /// Permitted values; empty means unrestricted.
    pub allowed: Vec<ConfigValue>,
}

/// Required paths every profile must carry.
///
/// Text form, one entry per line, `#` comments:
///
/// ```text
/// /hardware/cpus integer
/// /cluster/kind string 'batch' 'interactive' 'disk'
/// /cluster/name scalar
/// ```
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GlobalSchema {
    pub entries: Vec<SchemaEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    Missing { path: String },
    KindMismatch { path: String, expected: String, found: ValueKind },
    NotAllowed { path: String, value: String },
}

impl Violation {
    pub fn path(&self) -> &str {
        match self {
            Violation::Missing { path } | Violation::KindMismatch { path, .. } | Violation::NotAllowed { path, .. } => {
                path
            }
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Missing { path } => write!(f, "{path}: required path missing"),
            Violation::KindMismatch { path, expected, found } => {
                write!(f, "{path}: expected {expected}, found {found}")
            }
            Violation::NotAllowed { path, value } => write!(f, "{path}: value {value} not in enumeration"),
        }
    }
}

impl GlobalSchema {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn require(mut self, path: &str, kind: ExpectedKind, allowed: Vec<ConfigValue>) -> Result<Self, ConfigError> {
        self.entries.push(SchemaEntry {
            path: ConfigPath::parse(path)?,
            kind,
            allowed,
        });
        Ok(self)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut schema = Self::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split_once('#').map_or(raw, |(l, _)| l).trim();
            if line.is_empty() {
                continue;
            }
            let bad = |message: String| ConfigError::MalformedSchema { line: line_no, message };
            let mut parts = line.splitn(3, char::is_whitespace);
            let path = ConfigPath::parse(parts.next().unwrap_or_default()).map_err(|e| bad(e.to_string()))?;
            let kind_name = parts.next().ok_or_else(|| bad("missing kind".into()))?;
            let kind = match kind_name {
                "scalar" => ExpectedKind::Scalar,
                other => ExpectedKind::Exact(
                    ValueKind::from_name(other).ok_or_else(|| bad(format!("unknown kind `{other}`")))?,
                ),
            };
            let allowed = parts
                .next()
                .map(|rest| parse_values(rest).map_err(|e| bad(e.to_string())))
                .transpose()?
                .unwrap_or_default();
            if let Some(v) = allowed.iter().find(|v| !kind.accepts(v.kind())) {
                return Err(bad(format!("enumerated value of kind {} does not match {kind}", v.kind())));
            }
            schema.entries.push(SchemaEntry { path, kind, allowed });
        }
        Ok(schema)
    }
}

/// Returns every violation of `schema` by `profile`; empty means valid.
pub fn validate_schema(profile: &ProfileTree, schema: &GlobalSchema) -> Vec<Violation> {
    let mut out = Vec::new();
    for entry in &schema.entries {
        let path = entry.path.to_string();
        match query(profile, &entry.path) {
            Err(_) => out.push(Violation::Missing { path }),
            Ok(value) if !entry.kind.accepts(value.kind()) => out.push(Violation::KindMismatch {
                path,
                expected: entry.kind.to_string(),
                found: value.kind(),
            }),
            Ok(value) if !entry.allowed.is_empty() && !entry.allowed.contains(value) => {
                out.push(Violation::NotAllowed {
                    path,
                    value: value.scalar_literal().unwrap_or_else(|| value.kind().to_string()),
                })
            }
            Ok(_) => {}
        }
    }
    out
}
