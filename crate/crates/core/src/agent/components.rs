use std::collections::BTreeMap;

use crate::config::{ConfigValue, ProfileTree};

use super::node::VirtualNode;

/// A configuration component. Its output (a set of managed files) must be a
/// pure function of the profile and the node it runs on.
pub trait ConfigComponent: Send + Sync {
    fn name(&self) -> &str;

    fn configure(&self, profile: &ProfileTree, node: &VirtualNode) -> Result<BTreeMap<String, String>, String>;
}

/// Renders one profile subtree as `path = value` lines into a single file.
/// An absent subtree produces no file.
#[derive(Debug, Clone)]
pub struct TreeFileComponent {
    name: String,
    source: String,
    target: String,
}

impl TreeFileComponent {
    pub fn new(name: impl Into<String>, source: impl Into<String>, target: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            source: source.into(),
            target: target.into(),
        }
    }
}

fn flatten(prefix: &str, value: &ConfigValue, out: &mut String) {
    match value {
        ConfigValue::Record(fields) => {
            for (k, v) in fields {
                flatten(&format!("{prefix}/{k}"), v, out);
            }
        }
        ConfigValue::List(items) => {
            for (i, v) in items.iter().enumerate() {
                flatten(&format!("{prefix}/{i}"), v, out);
            }
        }
        scalar => {
            out.push_str(prefix);
            out.push_str(" = ");
            out.push_str(&scalar.scalar_literal().unwrap_or_default());
            out.push('\n');
        }
    }
}

impl ConfigComponent for TreeFileComponent {
    fn name(&self) -> &str {
        &self.name
    }

    fn configure(&self, profile: &ProfileTree, _node: &VirtualNode) -> Result<BTreeMap<String, String>, String> {
        let mut files = BTreeMap::new();
        if let Some(subtree) = profile.get(&self.source) {
            let mut body = String::new();
            flatten(&self.source, subtree, &mut body);
            files.insert(self.target.clone(), body);
        }
        Ok(files)
    }
}

/// Writes the login banner from `/system/motd`, and the list of enabled
/// services from `/system/services`, refusing services whose package is not
/// installed.
#[derive(Debug, Clone, Default)]
struct SystemComponent;

impl ConfigComponent for SystemComponent {
    fn name(&self) -> &str {
        "system"
    }

    fn configure(&self, profile: &ProfileTree, node: &VirtualNode) -> Result<BTreeMap<String, String>, String> {
        let mut files = BTreeMap::new();
        if let Some(motd) = profile.get("/system/motd").and_then(ConfigValue::as_str) {
            files.insert("/etc/motd".to_string(), format!("{motd}\n"));
        }
        if let Some(services) = profile.get("/system/services").and_then(ConfigValue::as_record) {
            let mut body = String::new();
            for (service, spec) in services {
                let package = spec
                    .child("package")
                    .and_then(ConfigValue::as_str)
                    .unwrap_or(service.as_str());
                if !node.installed().iter().any(|p| p.name == package) {
                    return Err(format!("service {service} needs package {package}, which is not installed"));
                }
                let enabled = spec.child("enabled").and_then(ConfigValue::as_bool).unwrap_or(true);
                body.push_str(&format!("{service} {}\n", if enabled { "on" } else { "off" }));
            }
            files.insert("/etc/services.conf".to_string(), body);
        }
        Ok(files)
    }
}

/// The ordered set of components run on every configuration pass.
pub struct ComponentRegistry {
    components: Vec<Box<dyn ConfigComponent>>,
}

impl Default for ComponentRegistry {
    fn default() -> Self {
        Self::standard()
    }
}

impl ComponentRegistry {
    pub fn empty() -> Self {
        Self { components: Vec::new() }
    }

    /// Components used by the simulator and CLI.
    pub fn standard() -> Self {
        Self::empty()
            .with(TreeFileComponent::new("cluster", "/cluster", "/etc/cluster.conf"))
            .with(TreeFileComponent::new("accounts", "/system/accounts", "/etc/passwd.managed"))
            .with(SystemComponent)
            .with(TreeFileComponent::new("batch", "/batch", "/etc/lsf.conf"))
    }

    pub fn with(mut self, component: impl ConfigComponent + 'static) -> Self {
        self.components.push(Box::new(component));
        self
    }

    pub fn iter(&self) -> impl Iterator<Item = &dyn ConfigComponent> {
        self.components.iter().map(|c| c.as_ref())
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }
}
