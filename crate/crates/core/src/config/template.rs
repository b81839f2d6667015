//! Template language: a small declarative notation for configuration trees.
//!
//! ```text
//! # comment
//! object node001;              # or: include <name>; as the header of a shared template
//! include site;                # after the header: expand another template first
//! '/cluster/name' = 'lxbatch'; # assign (fails if the path is already set)
//! '/cluster/name' := 'lxplus'; # override
//! delete '/cluster/name';      # remove a subtree
//! ```
//!
//! Values are single-quoted strings, decimal integers, `true`/`false`,
//! lists `[v, ...]` and records `{ key = v, ... }`.

use std::collections::{BTreeMap, BTreeSet};

use super::path::{is_identifier, ConfigPath};
use super::value::{unquote_at, ConfigValue};
use super::ConfigError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TemplateKind {
    /// Describes one node; compiling it yields that node's profile.
    Object,
    /// Shared fragment pulled into other templates.
    Include,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StatementMode {
    Assign(ConfigValue),
    Override(ConfigValue),
    Delete,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Statement {
    pub path: ConfigPath,
    pub mode: StatementMode,
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IncludeRef {
    pub name: String,
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateSource {
    pub name: String,
    pub kind: TemplateKind,
    pub includes: Vec<IncludeRef>,
    pub statements: Vec<Statement>,
}

impl TemplateSource {
    pub fn new(name: impl Into<String>, kind: TemplateKind) -> Self {
        Self {
            name: name.into(),
            kind,
            includes: Vec::new(),
            statements: Vec::new(),
        }
    }
}

/// A named collection of templates with unique names.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TemplateSet {
    templates: BTreeMap<String, TemplateSource>,
}

impl TemplateSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, template: TemplateSource) -> Result<(), ConfigError> {
        if self.templates.contains_key(&template.name) {
            return Err(ConfigError::DuplicateTemplate(template.name));
        }
        self.templates.insert(template.name.clone(), template);
        Ok(())
    }

    /// Inserts or replaces a template.
    pub fn upsert(&mut self, template: TemplateSource) {
        self.templates.insert(template.name.clone(), template);
    }

    pub fn get(&self, name: &str) -> Option<&TemplateSource> {
        self.templates.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut TemplateSource> {
        self.templates.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = &TemplateSource> {
        self.templates.values()
    }

    pub fn object_names(&self) -> impl Iterator<Item = &str> {
        self.templates
            .values()
            .filter(|t| t.kind == TemplateKind::Object)
            .map(|t| t.name.as_str())
    }

    pub fn len(&self) -> usize {
        self.templates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.templates.is_empty()
    }

    /// Parses several template texts into one set, rejecting duplicate names.
    pub fn parse_all<'a>(texts: impl IntoIterator<Item = &'a str>) -> Result<Self, ConfigError> {
        let mut set = Self::new();
        for text in texts {
            set.insert(parse_template(text)?)?;
        }
        Ok(set)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Word(String),
    Str(String),
    Int(i64),
    Semi,
    Eq,
    ColonEq,
    LBracket,
    RBracket,
    LBrace,
    RBrace,
    Comma,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Word(w) => format!("`{w}`"),
            Tok::Str(s) => format!("string '{s}'"),
            Tok::Int(i) => format!("integer {i}"),
            Tok::Semi => "`;`".into(),
            Tok::Eq => "`=`".into(),
            Tok::ColonEq => "`:=`".into(),
            Tok::LBracket => "`[`".into(),
            Tok::RBracket => "`]`".into(),
            Tok::LBrace => "`{`".into(),
            Tok::RBrace => "`}`".into(),
            Tok::Comma => "`,`".into(),
        }
    }
}

#[derive(Debug, Clone)]
struct Spanned {
    tok: Tok,
    line: usize,
    column: usize,
}

fn is_word_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.')
}

fn lex(text: &str) -> Result<(Vec<Spanned>, (usize, usize)), ConfigError> {
    let chars: Vec<char> = text.chars().collect();
    let mut toks = Vec::new();
    let (mut line, mut col) = (1usize, 1usize);
    let mut i = 0;
    let syntax = |line, column, message: String| ConfigError::Syntax { line, column, message };
    while i < chars.len() {
        let c = chars[i];
        let (tl, tc) = (line, col);
        let single = |tok| Spanned { tok, line: tl, column: tc };
        match c {
            '\n' => {
                line += 1;
                col = 1;
                i += 1;
                continue;
            }
            c if c.is_whitespace() => {}
            '#' => {
                while i < chars.len() && chars[i] != '\n' {
                    i += 1;
                }
                continue;
            }
            ';' => toks.push(single(Tok::Semi)),
            '=' => toks.push(single(Tok::Eq)),
            '[' => toks.push(single(Tok::LBracket)),
            ']' => toks.push(single(Tok::RBracket)),
            '{' => toks.push(single(Tok::LBrace)),
            '}' => toks.push(single(Tok::RBrace)),
            ',' => toks.push(single(Tok::Comma)),
            ':' => {
                if chars.get(i + 1) != Some(&'=') {
                    return Err(syntax(tl, tc, "expected `:=`".into()));
                }
                toks.push(single(Tok::ColonEq));
                i += 2;
                col += 2;
                continue;
            }
            '\'' => {
                let (s, end) = unquote_at(&chars, i).map_err(|m| syntax(tl, tc, m))?;
                if chars[i..end].contains(&'\n') {
                    return Err(syntax(tl, tc, "string literal spans lines".into()));
                }
                toks.push(single(Tok::Str(s)));
                col += end - i;
                i = end;
                continue;
            }
            c if is_word_char(c) => {
                let start = i;
                while i < chars.len() && is_word_char(chars[i]) {
                    i += 1;
                }
                let word: String = chars[start..i].iter().collect();
                col += i - start;
                let digits = word.strip_prefix('-').unwrap_or(&word);
                let looks_numeric = !digits.is_empty() && digits.bytes().all(|b| b.is_ascii_digit());
                let tok = if looks_numeric {
                    Tok::Int(word.parse().map_err(|_| syntax(tl, tc, format!("integer out of range: {word}")))?)
                } else {
                    Tok::Word(word)
                };
                toks.push(Spanned { tok, line: tl, column: tc });
                continue;
            }
            other => return Err(syntax(tl, tc, format!("unexpected character `{other}`"))),
        }
        i += 1;
        col += 1;
    }
    Ok((toks, (line, col)))
}

struct Parser {
    toks: Vec<Spanned>,
    pos: usize,
    eof: (usize, usize),
}

impl Parser {
    fn new(text: &str) -> Result<Self, ConfigError> {
        let (toks, eof) = lex(text)?;
        Ok(Self { toks, pos: 0, eof })
    }

    fn peek(&self) -> Option<&Spanned> {
        self.toks.get(self.pos)
    }

    fn at_end(&self) -> bool {
        self.pos >= self.toks.len()
    }

    fn here(&self) -> (usize, usize) {
        self.peek().map(|t| (t.line, t.column)).unwrap_or(self.eof)
    }

    fn error(&self, message: impl Into<String>) -> ConfigError {
        let (line, column) = self.here();
        ConfigError::Syntax { line, column, message: message.into() }
    }

    fn next(&mut self, expecting: &str) -> Result<Spanned, ConfigError> {
        match self.toks.get(self.pos) {
            Some(t) => {
                self.pos += 1;
                Ok(t.clone())
            }
            None => Err(self.error(format!("unexpected end of input, expected {expecting}"))),
        }
    }

    fn expect(&mut self, want: Tok) -> Result<(), ConfigError> {
        let t = self.next(&want.describe())?;
        if t.tok != want {
            self.pos -= 1;
            return Err(self.error(format!("expected {}, found {}", want.describe(), t.tok.describe())));
        }
        Ok(())
    }

    fn name(&mut self) -> Result<String, ConfigError> {
        let t = self.next("a name")?;
        match t.tok {
            Tok::Word(w) if is_identifier(&w) => Ok(w),
            other => {
                self.pos -= 1;
                Err(self.error(format!("expected a name, found {}", other.describe())))
            }
        }
    }

    fn path(&mut self) -> Result<(ConfigPath, usize), ConfigError> {
        let t = self.next("a quoted path")?;
        match t.tok {
            Tok::Str(s) => Ok((ConfigPath::parse(&s)?, t.line)),
            other => {
                self.pos -= 1;
                Err(self.error(format!("expected a quoted path, found {}", other.describe())))
            }
        }
    }

    fn value(&mut self) -> Result<ConfigValue, ConfigError> {
        let t = self.next("a value")?;
        Ok(match t.tok {
            Tok::Str(s) => ConfigValue::Str(s),
            Tok::Int(i) => ConfigValue::Int(i),
            Tok::Word(w) if w == "true" => ConfigValue::Bool(true),
            Tok::Word(w) if w == "false" => ConfigValue::Bool(false),
            Tok::LBracket => {
                let mut items = Vec::new();
                loop {
                    if matches!(self.peek().map(|t| &t.tok), Some(Tok::RBracket)) {
                        self.pos += 1;
                        break;
                    }
                    items.push(self.value()?);
                    let sep = self.next("`,` or `]`")?;
                    match sep.tok {
                        Tok::Comma => continue,
                        Tok::RBracket => break,
                        other => {
                            self.pos -= 1;
                            return Err(self.error(format!("expected `,` or `]`, found {}", other.describe())));
                        }
                    }
                }
                ConfigValue::List(items)
            }
            Tok::LBrace => {
                let mut fields = BTreeMap::new();
                loop {
                    if matches!(self.peek().map(|t| &t.tok), Some(Tok::RBrace)) {
                        self.pos += 1;
                        break;
                    }
                    let key = self.name()?;
                    self.expect(Tok::Eq)?;
                    let v = self.value()?;
                    if fields.insert(key.clone(), v).is_some() {
                        return Err(self.error(format!("duplicate record key `{key}`")));
                    }
                    let sep = self.next("`,` or `}`")?;
                    match sep.tok {
                        Tok::Comma => continue,
                        Tok::RBrace => break,
                        other => {
                            self.pos -= 1;
                            return Err(self.error(format!("expected `,` or `}}`, found {}", other.describe())));
                        }
                    }
                }
                ConfigValue::Record(fields)
            }
            other => {
                self.pos -= 1;
                return Err(self.error(format!("expected a value, found {}", other.describe())));
            }
        })
    }

    /// One body statement; `None` for an include directive (pushed into `includes`).
    fn statement(&mut self, includes: &mut Vec<IncludeRef>) -> Result<Option<Statement>, ConfigError> {
        let head = self.peek().cloned().ok_or_else(|| self.error("expected a statement"))?;
        match &head.tok {
            Tok::Word(w) if w == "include" => {
                self.pos += 1;
                let name = self.name()?;
                self.expect(Tok::Semi)?;
                includes.push(IncludeRef { name, line: head.line });
                Ok(None)
            }
            Tok::Word(w) if w == "delete" => {
                self.pos += 1;
                let (path, line) = self.path()?;
                self.expect(Tok::Semi)?;
                Ok(Some(Statement { path, mode: StatementMode::Delete, line }))
            }
            Tok::Str(_) => {
                let (path, line) = self.path()?;
                let op = self.next("`=` or `:=`")?;
                let is_override = match op.tok {
                    Tok::Eq => false,
                    Tok::ColonEq => true,
                    other => {
                        self.pos -= 1;
                        return Err(self.error(format!("expected `=` or `:=`, found {}", other.describe())));
                    }
                };
                let value = self.value()?;
                self.expect(Tok::Semi)?;
                let mode = if is_override {
                    StatementMode::Override(value)
                } else {
                    StatementMode::Assign(value)
                };
                Ok(Some(Statement { path, mode, line }))
            }
            other => Err(self.error(format!("expected a statement, found {}", other.describe()))),
        }
    }
}

/// Parses one template. The first declaration must be the header
/// (`object <name>;` or `include <name>;`); later `include` lines are include directives.
pub fn parse_template(text: &str) -> Result<TemplateSource, ConfigError> {
    let mut p = Parser::new(text)?;
    let kind = match p.next("`object` or `include` header")?.tok {
        Tok::Word(w) if w == "object" => TemplateKind::Object,
        Tok::Word(w) if w == "include" => TemplateKind::Include,
        other => {
            p.pos -= 1;
            return Err(p.error(format!("expected `object` or `include` header, found {}", other.describe())));
        }
    };
    let name = p.name()?;
    p.expect(Tok::Semi)?;
    let mut template = TemplateSource::new(name, kind);
    while !p.at_end() {
        if let Some(stmt) = p.statement(&mut template.includes)? {
            template.statements.push(stmt);
        }
    }
    let mut seen = BTreeSet::new();
    for inc in &template.includes {
        if !seen.insert(inc.name.as_str()) {
            return Err(ConfigError::Syntax {
                line: inc.line,
                column: 1,
                message: format!("template `{}` included twice", inc.name),
            });
        }
    }
    Ok(template)
}

/// Parses a whitespace-separated sequence of literal values, e.g. `'a' 'b' 3`.
pub(crate) fn parse_values(text: &str) -> Result<Vec<ConfigValue>, ConfigError> {
    let mut p = Parser::new(text)?;
    let mut out = Vec::new();
    while !p.at_end() {
        out.push(p.value()?);
    }
    Ok(out)
}

/// Parses a single statement line (assign, override or delete), as used for
/// incremental edits of an existing template.
pub fn parse_statement(text: &str) -> Result<Statement, ConfigError> {
    let mut p = Parser::new(text)?;
    let mut includes = Vec::new();
    let stmt = p.statement(&mut includes)?;
    if !p.at_end() {
        return Err(p.error("trailing input after statement"));
    }
    stmt.ok_or_else(|| ConfigError::Syntax {
        line: 1,
        column: 1,
        message: "include directives are not statements".into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_template() {
        let t = parse_template("object node001;").unwrap();
        assert_eq!(t.name, "node001");
        assert_eq!(t.kind, TemplateKind::Object);
        assert!(t.statements.is_empty());
        assert!(t.includes.is_empty());
    }

    #[test]
    fn single_assign() {
        let t = parse_template("object n1; '/cluster/name' = 'lxbatch';").unwrap();
        assert_eq!(
            t.statements,
            vec![Statement {
                path: ConfigPath::parse("/cluster/name").unwrap(),
                mode: StatementMode::Assign(ConfigValue::from("lxbatch")),
                line: 1,
            }]
        );
    }

    #[test]
    fn truncated_input_is_a_syntax_error_on_line_one() {
        match parse_template("object n1; '/a' = ") {
            Err(ConfigError::Syntax { line, .. }) => assert_eq!(line, 1),
            other => panic!("expected syntax error, got {other:?}"),
        }
    }

    #[test]
    fn full_grammar() {
        let text = "\
# site defaults
include site;
include base; # trailing comment
'/a/list' = [1, -2, 'x', true, [], {}];
'/a/rec' = { b = 'c', d = { e = false } };
'/a/list' := [];
delete '/a/rec/d';
";
        let t = parse_template(text).unwrap();
        assert_eq!(t.kind, TemplateKind::Include);
        assert_eq!(t.name, "site");
        assert_eq!(t.includes, vec![IncludeRef { name: "base".into(), line: 3 }]);
        assert_eq!(t.statements.len(), 4);
        assert_eq!(t.statements[0].line, 4);
        assert_eq!(t.statements[3].mode, StatementMode::Delete);
        match &t.statements[0].mode {
            StatementMode::Assign(ConfigValue::List(items)) => {
                assert_eq!(items[1], ConfigValue::Int(-2));
                assert_eq!(items[4], ConfigValue::List(vec![]));
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(t.statements[2].mode, StatementMode::Override(_)));
    }

    #[test]
    fn errors_carry_positions() {
        let err = parse_template("object n1;\n'/a' = 1;\n'/b' 2;").unwrap_err();
        assert!(matches!(err, ConfigError::Syntax { line: 3, column: 6, .. }), "{err:?}");
        let err = parse_template("object n1;\n'/A' = 1;").unwrap_err();
        assert!(matches!(err, ConfigError::MalformedPath { .. }), "{err:?}");
        let err = parse_template("object n1; '/a' = { k = 1, k = 2 };").unwrap_err();
        assert!(matches!(err, ConfigError::Syntax { .. }), "{err:?}");
        let err = parse_template("'/a' = 1;").unwrap_err();
        assert!(matches!(err, ConfigError::Syntax { line: 1, column: 1, .. }), "{err:?}");
        let err = parse_template("object n1; '/a' ?= 1;").unwrap_err();
        assert!(matches!(err, ConfigError::Syntax { .. }), "{err:?}");
    }

    #[test]
    fn duplicate_template_names_rejected() {
        let err = TemplateSet::parse_all(["object a;", "include a;"]).unwrap_err();
        assert_eq!(err, ConfigError::DuplicateTemplate("a".into()));
    }

    #[test]
    fn statement_lines() {
        let s = parse_statement("'/software/packages/openssh/version' := '3.6';").unwrap();
        assert!(matches!(s.mode, StatementMode::Override(ConfigValue::Str(ref v)) if v == "3.6"));
        assert!(parse_statement("include x;").is_err());
        assert!(parse_statement("delete '/a'; delete '/b';").is_err());
    }
}
