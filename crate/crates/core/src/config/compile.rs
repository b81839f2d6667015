use std::collections::{BTreeMap, BTreeSet};

use sha2::{Digest, Sha256};

use super::path::ConfigPath;
use super::profile_format::render_root;
use super::schema::{validate_schema, GlobalSchema};
use super::template::{StatementMode, TemplateKind, TemplateSet, TemplateSource};
use super::value::ConfigValue;
use super::ConfigError;

/// The compiled configuration of one node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProfileTree {
    pub node_name: String,
    pub generation: u64,
    pub root: BTreeMap<String, ConfigValue>,
}

impl ProfileTree {
    pub fn new(node_name: impl Into<String>, generation: u64, root: BTreeMap<String, ConfigValue>) -> Self {
        Self {
            node_name: node_name.into(),
            generation,
            root,
        }
    }

    pub fn query(&self, path: &ConfigPath) -> Result<&ConfigValue, ConfigError> {
        query(self, path)
    }

    /// Convenience lookup taking a path string; `None` for malformed or absent paths.
    pub fn get(&self, path: &str) -> Option<&ConfigValue> {
        ConfigPath::parse(path).ok().and_then(|p| query(self, &p).ok())
    }

    /// Hex SHA-256 of the canonical rendering of the tree, independent of node
    /// name and generation.
    pub fn content_hash(&self) -> String {
        hex::encode(Sha256::digest(render_root(&self.root).as_bytes()))
    }
}

/// Looks up `path` in `profile`. List elements are addressed by index.
pub fn query<'a>(profile: &'a ProfileTree, path: &ConfigPath) -> Result<&'a ConfigValue, ConfigError> {
    let mut segs = path.segments().iter();
    let first = segs.next().expect("paths are non-empty");
    let mut cur = profile.root.get(first);
    for seg in segs {
        cur = cur.and_then(|v| v.child(seg));
    }
    cur.ok_or_else(|| ConfigError::PathNotFound(path.to_string()))
}

/// Orders templates for compilation: each template's includes are expanded
/// depth-first, in listed order, before the template itself. A template reached
/// twice (diamond includes) is expanded only the first time.
fn expansion_order<'a>(templates: &'a TemplateSet, root: &str) -> Result<Vec<&'a TemplateSource>, ConfigError> {
    fn visit<'a>(
        templates: &'a TemplateSet,
        name: &str,
        stack: &mut Vec<String>,
        done: &mut BTreeSet<String>,
        order: &mut Vec<&'a TemplateSource>,
    ) -> Result<(), ConfigError> {
        if let Some(pos) = stack.iter().position(|s| s == name) {
            let mut chain = stack[pos..].to_vec();
            chain.push(name.to_string());
            return Err(ConfigError::CyclicInclude(chain));
        }
        if done.contains(name) {
            return Ok(());
        }
        let template = templates
            .get(name)
            .ok_or_else(|| ConfigError::MissingTemplate(name.to_string()))?;
        stack.push(name.to_string());
        for inc in &template.includes {
            visit(templates, &inc.name, stack, done, order)?;
        }
        stack.pop();
        done.insert(name.to_string());
        order.push(template);
        Ok(())
    }

    let mut order = Vec::new();
    visit(templates, root, &mut Vec::new(), &mut BTreeSet::new(), &mut order)?;
    Ok(order)
}

fn get_in<'a>(root: &'a BTreeMap<String, ConfigValue>, path: &ConfigPath) -> Option<&'a ConfigValue> {
    let mut segs = path.segments().iter();
    let mut cur = root.get(segs.next()?);
    for seg in segs {
        cur = cur?.child(seg);
    }
    cur
}

/// Walks to the record that holds the last segment of `path`, creating
/// intermediate records. Fails if an intermediate exists but is not a record.
fn parent_record<'a>(
    root: &'a mut BTreeMap<String, ConfigValue>,
    path: &ConfigPath,
) -> Result<&'a mut BTreeMap<String, ConfigValue>, String> {
    let segs = path.segments();
    let mut cur = root;
    for (depth, seg) in segs[..segs.len() - 1].iter().enumerate() {
        let entry = cur.entry(seg.clone()).or_insert_with(ConfigValue::empty_record);
        cur = match entry {
            ConfigValue::Record(r) => r,
            other => {
                return Err(format!(
                    "/{} is a {}, not a record",
                    segs[..=depth].join("/"),
                    other.kind()
                ))
            }
        };
    }
    Ok(cur)
}

fn remove_in(root: &mut BTreeMap<String, ConfigValue>, path: &ConfigPath) {
    let segs = path.segments();
    let mut cur = root;
    for seg in &segs[..segs.len() - 1] {
        match cur.get_mut(seg) {
            Some(ConfigValue::Record(r)) => cur = r,
            _ => return,
        }
    }
    cur.remove(path.last());
}

/// Compiles the object template `node` into a profile with generation 1.
///
/// Statements run in expansion order. Assigning an already-set path is an
/// error unless the statement overrides; deleting an absent path is a no-op.
pub fn compile_profile(
    templates: &TemplateSet,
    node: &str,
    schema: Option<&GlobalSchema>,
) -> Result<ProfileTree, ConfigError> {
    let object = templates
        .get(node)
        .ok_or_else(|| ConfigError::MissingTemplate(node.to_string()))?;
    if object.kind != TemplateKind::Object {
        return Err(ConfigError::NotAnObject(node.to_string()));
    }
    let mut root = BTreeMap::new();
    for template in expansion_order(templates, node)? {
        for stmt in &template.statements {
            let conflict = |reason: String| ConfigError::PathConflict {
                path: stmt.path.to_string(),
                template: template.name.clone(),
                line: stmt.line,
                reason,
            };
            match &stmt.mode {
                StatementMode::Assign(value) => {
                    if get_in(&root, &stmt.path).is_some() {
                        return Err(ConfigError::AssignCollision {
                            path: stmt.path.to_string(),
                            template: template.name.clone(),
                            line: stmt.line,
                        });
                    }
                    parent_record(&mut root, &stmt.path)
                        .map_err(conflict)?
                        .insert(stmt.path.last().to_string(), value.clone());
                }
                StatementMode::Override(value) => {
                    parent_record(&mut root, &stmt.path)
                        .map_err(conflict)?
                        .insert(stmt.path.last().to_string(), value.clone());
                }
                StatementMode::Delete => remove_in(&mut root, &stmt.path),
            }
        }
    }
    let profile = ProfileTree::new(node, 1, root);
    if let Some(schema) = schema {
        let violations = validate_schema(&profile, schema);
        if !violations.is_empty() {
            return Err(ConfigError::SchemaViolation(violations));
        }
    }
    Ok(profile)
}

/// The configuration database: compiled profiles per node with their
/// generation history. A recompilation only bumps the generation when the
/// content changed.
#[derive(Debug, Clone, Default)]
pub struct ProfileRepository {
    history: BTreeMap<String, Vec<ProfileTree>>,
}

impl ProfileRepository {
    pub fn new() -> Self {
        Self::default()
    }

    /// Recompiles `node`; returns the current profile and whether it changed.
    pub fn recompile(
        &mut self,
        templates: &TemplateSet,
        node: &str,
        schema: Option<&GlobalSchema>,
    ) -> Result<(&ProfileTree, bool), ConfigError> {
        let mut fresh = compile_profile(templates, node, schema)?;
        let history = self.history.entry(node.to_string()).or_default();
        let changed = match history.last() {
            Some(prev) if prev.root == fresh.root => false,
            Some(prev) => {
                fresh.generation = prev.generation + 1;
                true
            }
            None => true,
        };
        if changed {
            history.push(fresh);
        }
        Ok((history.last().expect("history is non-empty"), changed))
    }

    /// Recompiles every object template. Returns the nodes whose profile changed.
    pub fn recompile_all(
        &mut self,
        templates: &TemplateSet,
        schema: Option<&GlobalSchema>,
    ) -> Result<Vec<String>, ConfigError> {
        let names: Vec<String> = templates.object_names().map(str::to_string).collect();
        let mut changed = Vec::new();
        for name in names {
            if self.recompile(templates, &name, schema)?.1 {
                changed.push(name);
            }
        }
        Ok(changed)
    }

    pub fn latest(&self, node: &str) -> Option<&ProfileTree> {
        self.history.get(node).and_then(|h| h.last())
    }

    pub fn at_generation(&self, node: &str, generation: u64) -> Option<&ProfileTree> {
        self.history
            .get(node)?
            .iter()
            .find(|p| p.generation == generation)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &str> {
        self.history.keys().map(String::as_str)
    }
}
