use std::collections::BTreeMap;
use std::fmt;

/// A node in a configuration tree.
///
/// Records are kept in a `BTreeMap`, so key order is always bytewise and two
/// records built in different insertion orders compare equal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ConfigValue {
    Str(String),
    Int(i64),
    Bool(bool),
    List(Vec<ConfigValue>),
    Record(BTreeMap<String, ConfigValue>),
}

/// The kind tag used in the canonical profile format and in schema checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ValueKind {
    String,
    Integer,
    Boolean,
    List,
    Record,
}

impl ValueKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ValueKind::String => "string",
            ValueKind::Integer => "integer",
            ValueKind::Boolean => "boolean",
            ValueKind::List => "list",
            ValueKind::Record => "record",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "string" => ValueKind::String,
            "integer" => ValueKind::Integer,
            "boolean" => ValueKind::Boolean,
            "list" => ValueKind::List,
            "record" => ValueKind::Record,
            _ => return None,
        })
    }

    pub fn is_scalar(self) -> bool {
        matches!(self, ValueKind::String | ValueKind::Integer | ValueKind::Boolean)
    }
}

impl fmt::Display for ValueKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl ConfigValue {
    pub fn empty_record() -> Self {
        ConfigValue::Record(BTreeMap::new())
    }

    pub fn kind(&self) -> ValueKind {
        match self {
            ConfigValue::Str(_) => ValueKind::String,
            ConfigValue::Int(_) => ValueKind::Integer,
            ConfigValue::Bool(_) => ValueKind::Boolean,
            ConfigValue::List(_) => ValueKind::List,
            ConfigValue::Record(_) => ValueKind::Record,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            ConfigValue::Str(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_int(&self) -> Option<i64> {
        match self {
            ConfigValue::Int(i) => Some(*i),
            _ => None,
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match self {
            ConfigValue::Bool(b) => Some(*b),
            _ => None,
        }
    }

    pub fn as_record(&self) -> Option<&BTreeMap<String, ConfigValue>> {
        match self {
            ConfigValue::Record(r) => Some(r),
            _ => None,
        }
    }

    pub fn as_list(&self) -> Option<&[ConfigValue]> {
        match self {
            ConfigValue::List(l) => Some(l),
            _ => None,
        }
    }

    /// Child lookup by one path segment. Lists are addressed by zero-based index.
    pub fn child(&self, segment: &str) -> Option<&ConfigValue> {
        match self {
            ConfigValue::Record(r) => r.get(segment),
            ConfigValue::List(l) => segment.parse::<usize>().ok().and_then(|i| l.get(i)),
            _ => None,
        }
    }

    /// Renders a scalar in template/profile literal syntax.
    pub fn scalar_literal(&self) -> Option<String> {
        match self {
            ConfigValue::Str(s) => Some(quote_string(s)),
            ConfigValue::Int(i) => Some(i.to_string()),
            ConfigValue::Bool(b) => Some(b.to_string()),
            _ => None,
        }
    }
}

impl From<&str> for ConfigValue {
    fn from(s: &str) -> Self {
        ConfigValue::Str(s.to_string())
    }
}

impl From<i64> for ConfigValue {
    fn from(i: i64) -> Self {
        ConfigValue::Int(i)
    }
}

impl From<bool> for ConfigValue {
    fn from(b: bool) -> Self {
        ConfigValue::Bool(b)
    }
}

/// Single-quoted string literal. Backslash escapes keep the literal on one line.
pub fn quote_string(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('\'');
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\'' => out.push_str("\\'"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            '\r' => out.push_str("\\r"),
            c if c.is_control() => out.push_str(&format!("\\u{{{:x}}}", c as u32)),
            c => out.push(c),
        }
    }
    out.push('\'');
    out
}

/// Reads a quoted literal starting at `chars[start] == '\''`.
/// Returns the decoded string and the index just past the closing quote.
pub(crate) fn unquote_at(chars: &[char], start: usize) -> Result<(String, usize), String> {
    debug_assert_eq!(chars.get(start), Some(&'\''));
    let mut out = String::new();
    let mut i = start + 1;
    while i < chars.len() {
        match chars[i] {
            '\'' => return Ok((out, i + 1)),
            '\\' => {
                let esc = *chars.get(i + 1).ok_or("unterminated escape")?;
                i += 2;
                match esc {
                    '\\' => out.push('\\'),
                    '\'' => out.push('\''),
                    'n' => out.push('\n'),
                    't' => out.push('\t'),
                    'r' => out.push('\r'),
                    'u' => {
                        if chars.get(i) != Some(&'{') {
                            return Err("malformed unicode escape".into());
                        }
                        let close = chars[i..]
                            .iter()
                            .position(|&c| c == '}')
                            .ok_or("unterminated unicode escape")?;
                        let hex: String = chars[i + 1..i + close].iter().collect();
                        let code = u32::from_str_radix(&hex, 16)
                            .map_err(|_| format!("bad unicode escape `{hex}`"))?;
                        out.push(char::from_u32(code).ok_or("invalid code point")?);
                        i += close + 1;
                    }
                    other => return Err(format!("unknown escape `\\{other}`")),
                }
            }
            c => {
                out.push(c);
                i += 1;
            }
        }
    }
    Err("unterminated string".into())
}
