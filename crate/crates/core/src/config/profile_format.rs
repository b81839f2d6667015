//! Canonical profile text format.
//!
//! ```text
//! profile n1 generation 3
//! root record {
//!   cluster record {
//!     name string 'lxbatch'
//!   }
//!   services list {
//!     0 string 'sshd'
//!   }
//! }
//! ```
//!
//! Two-space indentation, record keys in bytewise order, list elements keyed
//! by zero-based index, trailing newline. The output is a pure function of the
//! tree, so equal trees serialize to identical bytes.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::compile::ProfileTree;
use super::path::is_identifier;
use super::value::{unquote_at, ConfigValue, ValueKind};
use super::ConfigError;

fn render_entry(out: &mut String, depth: usize, key: &str, value: &ConfigValue) {
    let indent = "  ".repeat(depth);
    let kind = value.kind();
    match value {
        ConfigValue::Record(fields) => {
            let _ = writeln!(out, "{indent}{key} {kind} {{");
            for (k, v) in fields {
                render_entry(out, depth + 1, k, v);
            }
            let _ = writeln!(out, "{indent}}}");
        }
        ConfigValue::List(items) => {
            let _ = writeln!(out, "{indent}{key} {kind} {{");
            for (i, v) in items.iter().enumerate() {
                render_entry(out, depth + 1, &i.to_string(), v);
            }
            let _ = writeln!(out, "{indent}}}");
        }
        scalar => {
            let literal = scalar.scalar_literal().expect("scalar");
            let _ = writeln!(out, "{indent}{key} {kind} {literal}");
        }
    }
}

pub(crate) fn render_root(root: &BTreeMap<String, ConfigValue>) -> String {
    let mut out = String::new();
    out.push_str("root record {\n");
    for (k, v) in root {
        render_entry(&mut out, 1, k, v);
    }
    out.push_str("}\n");
    out
}

pub fn serialize_profile(profile: &ProfileTree) -> Vec<u8> {
    let mut out = format!("profile {} generation {}\n", profile.node_name, profile.generation);
    out.push_str(&render_root(&profile.root));
    out.into_bytes()
}

struct Lines<'a> {
    lines: Vec<(usize, &'a str)>,
    pos: usize,
}

impl<'a> Lines<'a> {
    fn next(&mut self) -> Option<(usize, &'a str)> {
        let item = self.lines.get(self.pos).copied();
        self.pos += 1;
        item
    }
}

fn malformed(line: usize, message: impl Into<String>) -> ConfigError {
    ConfigError::MalformedDocument { line, message: message.into() }
}

/// Splits `key kind rest` and decodes the value. Containers return an empty
/// shell that the caller fills.
fn parse_entry(line_no: usize, line: &str) -> Result<(String, ConfigValue), ConfigError> {
    let mut parts = line.splitn(3, ' ');
    let key = parts.next().unwrap_or_default().to_string();
    let kind_name = parts.next().ok_or_else(|| malformed(line_no, "missing value kind"))?;
    let rest = parts.next().ok_or_else(|| malformed(line_no, "missing value"))?;
    let kind = ValueKind::from_name(kind_name).ok_or_else(|| ConfigError::UnknownKind {
        line: line_no,
        kind: kind_name.to_string(),
    })?;
    let value = match kind {
        ValueKind::String => {
            let chars: Vec<char> = rest.chars().collect();
            if chars.first() != Some(&'\'') {
                return Err(malformed(line_no, "string value must be quoted"));
            }
            let (s, end) = unquote_at(&chars, 0).map_err(|m| malformed(line_no, m))?;
            if end != chars.len() {
                return Err(malformed(line_no, "trailing characters after string"));
            }
            ConfigValue::Str(s)
        }
        ValueKind::Integer => ConfigValue::Int(
            rest.parse()
                .map_err(|_| malformed(line_no, format!("bad integer `{rest}`")))?,
        ),
        ValueKind::Boolean => match rest {
            "true" => ConfigValue::Bool(true),
            "false" => ConfigValue::Bool(false),
            _ => return Err(malformed(line_no, format!("bad boolean `{rest}`"))),
        },
        ValueKind::List | ValueKind::Record => {
            if rest != "{" {
                return Err(malformed(line_no, "expected `{` after container kind"));
            }
            if kind == ValueKind::List {
                ConfigValue::List(Vec::new())
            } else {
                ConfigValue::empty_record()
            }
        }
    };
    Ok((key, value))
}

/// Reads entries until the matching `}`, filling `container`.
fn parse_children(lines: &mut Lines<'_>, container: &mut ConfigValue, opened_at: usize) -> Result<(), ConfigError> {
    loop {
        let (line_no, line) = lines
            .next()
            .ok_or_else(|| malformed(opened_at, "unclosed `{`"))?;
        if line == "}" {
            return Ok(());
        }
        let (key, mut value) = parse_entry(line_no, line)?;
        if matches!(value, ConfigValue::List(_) | ConfigValue::Record(_)) {
            parse_children(lines, &mut value, line_no)?;
        }
        match container {
            ConfigValue::Record(fields) => {
                if !is_identifier(&key) {
                    return Err(malformed(line_no, format!("invalid record key `{key}`")));
                }
                if fields.insert(key.clone(), value).is_some() {
                    return Err(malformed(line_no, format!("duplicate record key `{key}`")));
                }
            }
            ConfigValue::List(items) => {
                if key != items.len().to_string() {
                    return Err(malformed(line_no, format!("expected list index {}, found `{key}`", items.len())));
                }
                items.push(value);
            }
            _ => unreachable!("only containers have children"),
        }
    }
}

/// Parses the canonical format. Leading indentation and blank lines are
/// tolerated so hand-edited documents load; the structure comes from braces.
pub fn parse_profile(bytes: &[u8]) -> Result<ProfileTree, ConfigError> {
    let text = std::str::from_utf8(bytes).map_err(|e| malformed(1, format!("not UTF-8: {e}")))?;
    let lines: Vec<(usize, &str)> = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty())
        .collect();
    let mut lines = Lines { lines, pos: 0 };

    let (hdr_no, header) = lines.next().ok_or_else(|| malformed(1, "empty document"))?;
    let fields: Vec<&str> = header.split(' ').collect();
    let (node_name, generation) = match fields.as_slice() {
        ["profile", name, "generation", gen] if is_identifier(name) => (
            name.to_string(),
            gen.parse::<u64>()
                .map_err(|_| malformed(hdr_no, format!("bad generation `{gen}`")))?,
        ),
        _ => return Err(malformed(hdr_no, "expected `profile <node> generation <n>`")),
    };

    let (root_no, root_line) = lines.next().ok_or_else(|| malformed(hdr_no, "missing root record"))?;
    let (key, mut root) = parse_entry(root_no, root_line)?;
    if key != "root" || root.kind() != ValueKind::Record {
        return Err(malformed(root_no, "expected `root record {`"));
    }
    parse_children(&mut lines, &mut root, root_no)?;
    if let Some((line_no, _)) = lines.next() {
        return Err(malformed(line_no, "content after the root record"));
    }
    let ConfigValue::Record(root) = root else { unreachable!() };
    Ok(ProfileTree::new(node_name, generation, root))
}
