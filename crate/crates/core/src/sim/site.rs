//! The simulated site: shared templates, one object template per node, and
//! the install specification for each node kind.

use crate::agent::{BootMethod, InstallSpec, Partition};
use crate::config::{parse_template, ConfigError, TemplateSet};
use crate::packages::{DesiredList, PackageSet};

use super::scenario::{NodeDecl, NodeKind};

pub const BASE_TEMPLATE: &str = "include base;
'/software/packages/kernel' = { version = '2.4.20', release = '20.7', arch = 'i686' };
'/software/packages/glibc' = { version = '2.3.2', release = '27.9', arch = 'i686' };
'/software/packages/bash' = { version = '2.05b', release = '20', arch = 'i386' };
'/software/packages/openssh' = { version = '3.5p1', release = '11', arch = 'i386' };
'/system/services/sshd' = { package = 'openssh' };
'/system/motd' = 'managed node, local changes are overwritten';
'/system/accounts/root' = { uid = 0, shell = '/bin/bash' };
";

pub const BATCH_TEMPLATE: &str = "include batch;
include base;
'/cluster/name' = 'lxbatch';
'/software/packages/lsf' = { version = '4.2', release = '3', arch = 'i386' };
'/system/services/sbatchd' = { package = 'lsf' };
'/batch/master' = 'lsfmaster';
";

pub const INTERACTIVE_TEMPLATE: &str = "include interactive;
include base;
'/cluster/name' = 'lxplus';
'/software/packages/emacs' = { version = '21.2', release = '33', arch = 'i386' };
'/system/accounts/users' = { shell = '/bin/tcsh' };
";

pub const DISK_TEMPLATE: &str = "include disk;
include base;
'/cluster/name' = 'lxdisk';
'/software/packages/nfs-utils' = { version = '1.0.1', release = '2.9', arch = 'i386' };
'/system/services/nfs' = { package = 'nfs-utils' };
";

pub fn kind_template(kind: NodeKind) -> &'static str {
    match kind {
        NodeKind::Batch => "batch",
        NodeKind::Interactive => "interactive",
        NodeKind::Disk => "disk",
    }
}

pub fn object_template(node: &NodeDecl) -> String {
    let mut text = format!(
        "object {name};\ninclude {kind};\n'/system/hostname' = '{name}';\n",
        name = node.name,
        kind = kind_template(node.kind)
    );
    if node.kind == NodeKind::Batch {
        text.push_str(&format!("'/batch/slots' = {};\n", node.slots));
    }
    if node.cluster != node.kind.default_cluster() {
        text.push_str(&format!("'/cluster/name' := '{}';\n", node.cluster));
    }
    text
}

/// Shared templates plus an object template for every node.
pub fn site_templates(nodes: &[NodeDecl]) -> Result<TemplateSet, ConfigError> {
    let mut set = TemplateSet::parse_all([BASE_TEMPLATE, BATCH_TEMPLATE, INTERACTIVE_TEMPLATE, DISK_TEMPLATE])?;
    for node in nodes {
        set.insert(parse_template(&object_template(node))?)?;
    }
    Ok(set)
}

/// Packages laid down by the base install, before the profile is applied.
pub fn base_packages() -> DesiredList {
    let set = PackageSet::parse(
        "kernel 2.4.20 8 i686\n\
         glibc 2.3.2 11 i686\n\
         bash 2.05b 20 i386\n\
         anaconda-runtime 9 1 i386\n",
    )
    .expect("built-in base list parses");
    DesiredList::new(set, 0)
}

pub fn install_spec(kind: NodeKind) -> InstallSpec {
    let mut partitions = vec![Partition::new("/", 8, false), Partition::new("/tmp", 2, false)];
    if kind == NodeKind::Disk {
        partitions.push(Partition::new("/data", 1000, true));
    }
    InstallSpec {
        partitions,
        base_packages: base_packages(),
        boot_method: BootMethod::Pxe,
    }
}
