//! Configuration compiler: templates in, per-node profiles out.
//!
//! Templates are parsed ([`parse_template`]), compiled per node against an
//! optional [`GlobalSchema`] ([`compile_profile`]), serialized to a canonical
//! text form ([`serialize_profile`] / [`parse_profile`]) and queried by path
//! ([`query`]). [`ProfileRepository`] keeps the per-node generation history.

mod compile;
mod path;
mod profile_format;
mod schema;
mod template;
mod value;

use thiserror::Error;

pub use compile::{compile_profile, query, ProfileRepository, ProfileTree};
pub use path::{is_identifier, ConfigPath};
pub use profile_format::{parse_profile, serialize_profile};
pub use schema::{validate_schema, ExpectedKind, GlobalSchema, SchemaEntry, Violation};
pub use template::{
    parse_statement, parse_template, IncludeRef, Statement, StatementMode, TemplateKind, TemplateSet,
    TemplateSource,
};
pub use value::{quote_string, ConfigValue, ValueKind};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax { line: usize, column: usize, message: String },
    #[error("duplicate template name `{0}`")]
    DuplicateTemplate(String),
    #[error("malformed path `{path}`: {reason}")]
    MalformedPath { path: String, reason: String },
    #[error("template `{0}` not found")]
    MissingTemplate(String),
    #[error("template `{0}` is not an object template")]
    NotAnObject(String),
    #[error("cyclic include: {}", .0.join(" -> "))]
    CyclicInclude(Vec<String>),
    #[error("`{path}` already assigned (template `{template}`, line {line}); use `:=` to override")]
    AssignCollision { path: String, template: String, line: usize },
    #[error("cannot set `{path}` (template `{template}`, line {line}): {reason}")]
    PathConflict { path: String, template: String, line: usize, reason: String },
    #[error("schema violations: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    SchemaViolation(Vec<Violation>),
    #[error("malformed profile document at line {line}: {message}")]
    MalformedDocument { line: usize, message: String },
    #[error("unknown value kind `{kind}` at line {line}")]
    UnknownKind { line: usize, kind: String },
    #[error("path `{0}` not found")]
    PathNotFound(String),
    #[error("malformed schema at line {line}: {message}")]
    MalformedSchema { line: usize, message: String },
}
