use std::collections::BTreeMap;
use std::fmt;

use sha2::{Digest, Sha256};

use crate::config::ProfileTree;
use crate::packages::{self, DesiredList, InstalledSet, PackageKey, ReconcilePlan};

use super::components::ComponentRegistry;
use super::{AgentError, ProfileSource};

/// Package whose upgrade plus a reboot constitutes a kernel update.
pub const KERNEL_PACKAGE: &str = "kernel";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Phase {
    Unprovisioned,
    BaseInstalling,
    AwaitingFirstBoot,
    Configuring,
    Production,
    Draining,
    Intervention,
    Down,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Unprovisioned => "unprovisioned",
            Phase::BaseInstalling => "base_installing",
            Phase::AwaitingFirstBoot => "awaiting_first_boot",
            Phase::Configuring => "configuring",
            Phase::Production => "production",
            Phase::Draining => "draining",
            Phase::Intervention => "intervention",
            Phase::Down => "down",
        }
    }

    /// The legal phase graph. Besides the install path and the maintenance
    /// loop, any provisioned phase may fail to `Down`, a node stuck in
    /// `Configuring` may be reinstalled, and an aborted drain returns to
    /// `Production`.
    pub fn can_transition_to(self, next: Phase) -> bool {
        use Phase::*;
        matches!(
            (self, next),
            (Unprovisioned, BaseInstalling)
                | (BaseInstalling, AwaitingFirstBoot)
                | (AwaitingFirstBoot, Configuring)
                | (AwaitingFirstBoot, BaseInstalling)
                | (Configuring, Production)
                | (Configuring, BaseInstalling)
                | (Production, Draining)
                | (Production, Intervention)
                | (Production, BaseInstalling)
                | (Draining, Intervention)
                | (Draining, Production)
                | (Intervention, BaseInstalling)
                | (Intervention, Production)
                | (Down, BaseInstalling)
                | (BaseInstalling | AwaitingFirstBoot | Configuring | Production | Draining | Intervention, Down)
        )
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeState {
    pub phase: Phase,
    pub boot_count: u64,
    pub firstboot_hook_armed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BootMethod {
    Floppy,
    Kernel,
    Pxe,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    pub mount: String,
    pub size_gb: u32,
    pub preserve: bool,
}

impl Partition {
    pub fn new(mount: impl Into<String>, size_gb: u32, preserve: bool) -> Self {
        Self {
            mount: mount.into(),
            size_gb,
            preserve,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstallSpec {
    pub partitions: Vec<Partition>,
    pub base_packages: DesiredList,
    pub boot_method: BootMethod,
}

impl InstallSpec {
    pub fn validate(&self) -> Result<(), AgentError> {
        let roots = self.partitions.iter().filter(|p| p.mount == "/").count();
        if roots != 1 {
            return Err(AgentError::InvalidInstallSpec(format!(
                "expected exactly one root mount, found {roots}"
            )));
        }
        if let Some(p) = self.partitions.iter().find(|p| p.mount == "/" && p.preserve) {
            return Err(AgentError::InvalidInstallSpec(format!("{} cannot be preserved", p.mount)));
        }
        let mut mounts: Vec<&str> = self.partitions.iter().map(|p| p.mount.as_str()).collect();
        mounts.sort_unstable();
        if mounts.windows(2).any(|w| w[0] == w[1]) {
            return Err(AgentError::InvalidInstallSpec("duplicate mount point".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Disk {
    pub size_gb: u32,
    pub preserve: bool,
    /// Digest of the data on the disk; empty when freshly formatted.
    pub data_digest: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComponentFailure {
    pub component: String,
    pub message: String,
}

/// What a boot did.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BootOutcome {
    /// The armed first-boot hook ran; lists component failures, if any.
    FirstBoot { failures: Vec<ComponentFailure> },
    /// Plain reboot, no hook.
    Reboot,
}

#[derive(Debug, Clone)]
pub struct VirtualNode {
    name: String,
    state: NodeState,
    installed: InstalledSet,
    disks: BTreeMap<String, Disk>,
    pending_base: Option<InstallSpec>,
    /// (generation, content hash) of the profile the components last ran against.
    applied_profile: Option<(u64, String)>,
    package_generation: Option<u64>,
    secrets: BTreeMap<String, Vec<u8>>,
    config_marks: BTreeMap<String, u64>,
    /// Managed files: path -> (owning component, content).
    files: BTreeMap<String, (String, String)>,
    component_errors: BTreeMap<String, String>,
    errors: Vec<String>,
    hook_runs: u32,
    installs: u64,
}

impl VirtualNode {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            state: NodeState {
                phase: Phase::Unprovisioned,
                boot_count: 0,
                firstboot_hook_armed: false,
            },
            installed: InstalledSet::new(),
            disks: BTreeMap::new(),
            pending_base: None,
            applied_profile: None,
            package_generation: None,
            secrets: BTreeMap::new(),
            config_marks: BTreeMap::new(),
            files: BTreeMap::new(),
            component_errors: BTreeMap::new(),
            errors: Vec::new(),
            hook_runs: 0,
            installs: 0,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn state(&self) -> &NodeState {
        &self.state
    }

    pub fn phase(&self) -> Phase {
        self.state.phase
    }

    pub fn installed(&self) -> &InstalledSet {
        &self.installed
    }

    pub fn disks(&self) -> &BTreeMap<String, Disk> {
        &self.disks
    }

    pub fn secrets(&self) -> &BTreeMap<String, Vec<u8>> {
        &self.secrets
    }

    pub fn config_marks(&self) -> &BTreeMap<String, u64> {
        &self.config_marks
    }

    pub fn files(&self) -> impl Iterator<Item = (&str, &str)> {
        self.files.iter().map(|(p, (_, c))| (p.as_str(), c.as_str()))
    }

    pub fn file(&self, path: &str) -> Option<&str> {
        self.files.get(path).map(|(_, c)| c.as_str())
    }

    pub fn component_errors(&self) -> &BTreeMap<String, String> {
        &self.component_errors
    }

    /// Errors recorded since the last install, oldest first.
    pub fn errors(&self) -> &[String] {
        &self.errors
    }

    /// How many times the first-boot hook ran since the last install.
    pub fn hook_runs(&self) -> u32 {
        self.hook_runs
    }

    pub fn installs(&self) -> u64 {
        self.installs
    }

    pub fn applied_generation(&self) -> Option<u64> {
        self.applied_profile.as_ref().map(|(g, _)| *g)
    }

    pub fn package_generation(&self) -> Option<u64> {
        self.package_generation
    }

    /// Both packages and components reflect the same profile generation.
    pub fn is_settled(&self) -> bool {
        self.applied_generation().is_some() && self.applied_generation() == self.package_generation
    }

    /// Moves to `next` if the phase graph allows it.
    pub fn transition(&mut self, next: Phase) -> Result<(), AgentError> {
        if !self.state.phase.can_transition_to(next) {
            return Err(AgentError::IllegalPhase {
                node: self.name.clone(),
                from: self.state.phase,
                to: next,
            });
        }
        self.state.phase = next;
        if next != Phase::AwaitingFirstBoot {
            self.state.firstboot_hook_armed = false;
        }
        Ok(())
    }

    /// Node crash: the machine goes down. Local state stays as it was; the
    /// next install decides what survives.
    pub fn fail(&mut self) -> Result<(), AgentError> {
        self.transition(Phase::Down)
    }

    pub fn install_secret(&mut self, label: impl Into<String>, payload: Vec<u8>) {
        self.secrets.insert(label.into(), payload);
    }

    /// Writes data onto a disk, changing its digest.
    pub fn write_disk(&mut self, mount: &str, data: &[u8]) -> bool {
        match self.disks.get_mut(mount) {
            Some(disk) => {
                let mut h = Sha256::new();
                h.update(disk.data_digest.as_bytes());
                h.update(data);
                disk.data_digest = hex::encode(h.finalize());
                true
            }
            None => false,
        }
    }

    /// First half of an install: partitions are laid out, non-preserved
    /// mounts are wiped and all local state except preserved disks is lost.
    pub fn start_base_install(&mut self, spec: &InstallSpec) -> Result<(), AgentError> {
        spec.validate()?;
        if self.state.phase == Phase::BaseInstalling {
            return Err(AgentError::IllegalOperation {
                node: self.name.clone(),
                op: "begin_install",
                phase: self.state.phase,
            });
        }
        self.transition(Phase::BaseInstalling)?;
        let old = std::mem::take(&mut self.disks);
        for p in &spec.partitions {
            let data_digest = match old.get(&p.mount) {
                Some(d) if p.preserve && d.preserve => d.data_digest.clone(),
                _ => String::new(),
            };
            self.disks.insert(
                p.mount.clone(),
                Disk {
                    size_gb: p.size_gb,
                    preserve: p.preserve,
                    data_digest,
                },
            );
        }
        self.installed = InstalledSet::new();
        self.applied_profile = None;
        self.package_generation = None;
        self.secrets.clear();
        self.config_marks.clear();
        self.files.clear();
        self.component_errors.clear();
        self.errors.clear();
        self.hook_runs = 0;
        self.installs += 1;
        self.pending_base = Some(spec.clone());
        Ok(())
    }

    /// Second half of an install: base packages land and the first-boot hook
    /// is armed for the next boot.
    pub fn complete_base_install(&mut self) -> Result<(), AgentError> {
        let spec = match (&self.state.phase, self.pending_base.take()) {
            (Phase::BaseInstalling, Some(spec)) => spec,
            _ => {
                return Err(AgentError::IllegalOperation {
                    node: self.name.clone(),
                    op: "complete_base_install",
                    phase: self.state.phase,
                })
            }
        };
        self.installed = spec.base_packages.packages.clone();
        self.transition(Phase::AwaitingFirstBoot)?;
        self.state.firstboot_hook_armed = true;
        Ok(())
    }

    /// Both halves of the base install.
    pub fn begin_install(&mut self, spec: &InstallSpec) -> Result<(), AgentError> {
        self.start_base_install(spec)?;
        self.complete_base_install()
    }

    /// Boots the node: runs the first-boot hook if armed, otherwise a plain reboot.
    pub fn boot(
        &mut self,
        source: &mut dyn ProfileSource,
        registry: &ComponentRegistry,
    ) -> Result<BootOutcome, AgentError> {
        if self.state.firstboot_hook_armed {
            self.first_boot(source, registry)
        } else {
            self.reboot()?;
            Ok(BootOutcome::Reboot)
        }
    }

    /// The run-once hook: fetch profile, reconcile packages, run components.
    /// The hook is disarmed before any step runs, so a failure leaves the
    /// node in `Configuring` with the error recorded and nothing re-arms it
    /// short of another install.
    pub fn first_boot(
        &mut self,
        source: &mut dyn ProfileSource,
        registry: &ComponentRegistry,
    ) -> Result<BootOutcome, AgentError> {
        if self.state.phase != Phase::AwaitingFirstBoot || !self.state.firstboot_hook_armed {
            return Err(AgentError::IllegalOperation {
                node: self.name.clone(),
                op: "first_boot",
                phase: self.state.phase,
            });
        }
        self.state.boot_count += 1;
        self.transition(Phase::Configuring)?;
        self.hook_runs += 1;

        let profile = match source.fetch_profile(&self.name) {
            Ok(p) => p,
            Err(message) => return Err(self.hook_failed("fetch_profile", message)),
        };
        if let Err(e) = self.reconcile_packages(&profile) {
            return Err(self.hook_failed("reconcile_packages", e.to_string()));
        }
        let failures = self.run_components(&profile, registry);
        Ok(BootOutcome::FirstBoot { failures })
    }

    fn hook_failed(&mut self, step: &'static str, message: String) -> AgentError {
        self.errors.push(format!("{step}: {message}"));
        AgentError::HookFailed {
            node: self.name.clone(),
            step,
            message,
        }
    }

    /// Reboot without reinstall. Returns a node in `Intervention` to production.
    pub fn reboot(&mut self) -> Result<(), AgentError> {
        match self.state.phase {
            Phase::Production => {}
            Phase::Intervention => self.transition(Phase::Production)?,
            phase => {
                return Err(AgentError::IllegalOperation {
                    node: self.name.clone(),
                    op: "reboot",
                    phase,
                })
            }
        }
        self.state.boot_count += 1;
        Ok(())
    }

    fn require_configurable(&self, op: &'static str) -> Result<(), AgentError> {
        match self.state.phase {
            Phase::Configuring | Phase::Production | Phase::Draining | Phase::Intervention => Ok(()),
            phase => Err(AgentError::IllegalOperation {
                node: self.name.clone(),
                op,
                phase,
            }),
        }
    }

    /// Brings the installed set to exactly the profile's package list.
    pub fn reconcile_packages(&mut self, profile: &ProfileTree) -> Result<ReconcilePlan, AgentError> {
        self.require_configurable("reconcile_packages")?;
        let desired = DesiredList::from_profile(profile)?;
        let plan = packages::plan(&desired, &self.installed);
        self.installed = packages::apply(&plan, &self.installed)?;
        self.package_generation = Some(profile.generation);
        Ok(plan)
    }

    /// Updates only the kernel package to the configured build, then reboots.
    pub fn kernel_update(&mut self, profile: &ProfileTree) -> Result<ReconcilePlan, AgentError> {
        self.require_configurable("kernel_update")?;
        let desired = DesiredList::from_profile(profile)?;
        let mut plan = packages::plan(&desired, &self.installed);
        plan.actions
            .retain(|a| a.key().name == KERNEL_PACKAGE);
        self.installed = packages::apply(&plan, &self.installed)?;
        self.reboot()?;
        Ok(plan)
    }

    /// Runs every registered component against `profile`. A failing
    /// component is recorded and skipped; the rest still run. When the
    /// profile was already fully applied the pass is skipped.
    pub fn run_components(&mut self, profile: &ProfileTree, registry: &ComponentRegistry) -> Vec<ComponentFailure> {
        let applied = Some((profile.generation, profile.content_hash()));
        let up_to_date = self.applied_profile == applied
            && self.component_errors.is_empty()
            && registry
                .iter()
                .all(|c| self.config_marks.get(c.name()) == Some(&profile.generation));
        if up_to_date {
            self.promote_if_configured();
            return Vec::new();
        }
        self.run_components_full(profile, registry, applied)
    }

    /// Same as [`run_components`](Self::run_components) without the fast path.
    pub fn run_components_forced(
        &mut self,
        profile: &ProfileTree,
        registry: &ComponentRegistry,
    ) -> Vec<ComponentFailure> {
        let applied = Some((profile.generation, profile.content_hash()));
        self.run_components_full(profile, registry, applied)
    }

    fn run_components_full(
        &mut self,
        profile: &ProfileTree,
        registry: &ComponentRegistry,
        applied: Option<(u64, String)>,
    ) -> Vec<ComponentFailure> {
        let mut failures = Vec::new();
        for component in registry.iter() {
            let name = component.name().to_string();
            match component.configure(profile, self) {
                Ok(files) => {
                    self.files.retain(|_, (owner, _)| owner != &name);
                    for (path, content) in files {
                        self.files.insert(path, (name.clone(), content));
                    }
                    self.config_marks.insert(name.clone(), profile.generation);
                    self.component_errors.remove(&name);
                }
                Err(message) => {
                    self.errors.push(format!("component {name}: {message}"));
                    self.component_errors.insert(name.clone(), message.clone());
                    failures.push(ComponentFailure { component: name, message });
                }
            }
        }
        self.applied_profile = applied;
        self.promote_if_configured();
        failures
    }

    fn promote_if_configured(&mut self) {
        let reconciled = self.package_generation.is_some();
        if self.state.phase == Phase::Configuring && reconciled && self.component_errors.is_empty() {
            self.state.phase = Phase::Production;
        }
    }

    /// Package reconciliation plus components, as an update trigger does.
    pub fn update_in_place(
        &mut self,
        profile: &ProfileTree,
        registry: &ComponentRegistry,
    ) -> Result<Vec<ComponentFailure>, AgentError> {
        self.reconcile_packages(profile)?;
        Ok(self.run_components(profile, registry))
    }

    /// Digest of everything that defines the node: installed packages,
    /// partition layout with preserved-disk data, the applied profile,
    /// component marks and managed files. Boot count, secrets and key
    /// material are excluded.
    pub fn state_digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(b"packages\n");
        h.update(self.installed.render().as_bytes());
        h.update(b"disks\n");
        for (mount, disk) in &self.disks {
            let data = if disk.preserve { disk.data_digest.as_str() } else { "-" };
            h.update(format!("{mount} {} {} {data}\n", disk.size_gb, disk.preserve).as_bytes());
        }
        h.update(b"profile\n");
        if let Some((_, hash)) = &self.applied_profile {
            h.update(hash.as_bytes());
        }
        h.update(b"\nmarks\n");
        for (component, generation) in &self.config_marks {
            h.update(format!("{component} {generation}\n").as_bytes());
        }
        h.update(b"files\n");
        for (path, (owner, content)) in &self.files {
            h.update(format!("{path} {owner} {}\n", content.len()).as_bytes());
            h.update(content.as_bytes());
        }
        hex::encode(h.finalize())
    }

    /// Installed build of a package, if any.
    pub fn installed_version(&self, name: &str, arch: &str) -> Option<String> {
        self.installed
            .get(&PackageKey {
                name: name.to_string(),
                arch: arch.to_string(),
            })
            .map(|s| s.evr())
    }
}

/// Reinstalls a copy of `node` from scratch with `profile` and returns it.
/// The original is untouched; preserved disks carry over as they would on
/// the real machine.
pub fn simulate_reinstall(
    node: &VirtualNode,
    spec: &InstallSpec,
    profile: &ProfileTree,
    registry: &ComponentRegistry,
) -> Result<VirtualNode, AgentError> {
    let mut copy = node.clone();
    copy.state.phase = Phase::Down;
    copy.begin_install(spec)?;
    let mut source = |_: &str| Ok::<_, String>(profile.clone());
    copy.first_boot(&mut source, registry)?;
    Ok(copy)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::components::{ConfigComponent, TreeFileComponent};
    use crate::config::{compile_profile, TemplateSet};
    use crate::packages::PackageSet;

    fn base() -> DesiredList {
        DesiredList::new(PackageSet::parse("kernel 2.4.20 18 i686\nbash 2.05 8 i386\n").unwrap(), 0)
    }

    fn spec(extra: Vec<Partition>) -> InstallSpec {
        let mut partitions = vec![Partition::new("/", 10, false)];
        partitions.extend(extra);
        InstallSpec {
            partitions,
            base_packages: base(),
            boot_method: BootMethod::Pxe,
        }
    }

    fn profile(statements: &str) -> ProfileTree {
        let text = format!("object n1; {statements}");
        compile_profile(&TemplateSet::parse_all([text.as_str()]).unwrap(), "n1", None).unwrap()
    }

    fn pkgs() -> &'static str {
        "'/software/packages/kernel' = { version = '2.4.20', release = '20', arch = 'i686' };
         '/software/packages/openssh' = { version = '3.5p1', release = '6', arch = 'i386' };
         '/cluster/name' = 'lxbatch';
         '/system/services/sshd' = { package = 'openssh' };"
    }

    fn ok_source(p: ProfileTree) -> impl FnMut(&str) -> Result<ProfileTree, String> {
        move |_| Ok(p.clone())
    }

    #[test]
    fn fresh_pxe_install() {
        let mut n = VirtualNode::new("n1");
        n.begin_install(&spec(vec![])).unwrap();
        assert_eq!(n.installed(), &base().packages);
        assert_eq!(n.phase(), Phase::AwaitingFirstBoot);
        assert!(n.state().firstboot_hook_armed);
    }

    #[test]
    fn preserved_disk_survives_install() {
        let mut n = VirtualNode::new("disk01");
        let s = spec(vec![Partition::new("/data", 1000, true), Partition::new("/pool", 50, false)]);
        n.begin_install(&s).unwrap();
        assert!(n.write_disk("/data", b"physics"));
        assert!(n.write_disk("/pool", b"scratch"));
        assert!(n.write_disk("/", b"local edits"));
        let data = n.disks()["/data"].data_digest.clone();
        n.transition(Phase::Configuring).unwrap();
        n.begin_install(&s).unwrap();
        assert_eq!(n.disks()["/data"].data_digest, data);
        assert_eq!(n.disks()["/"].data_digest, "");
        assert_eq!(n.disks()["/pool"].data_digest, "");
    }

    #[test]
    fn install_while_installing_is_illegal() {
        let mut n = VirtualNode::new("n1");
        n.start_base_install(&spec(vec![])).unwrap();
        assert!(matches!(
            n.begin_install(&spec(vec![])),
            Err(AgentError::IllegalOperation { phase: Phase::BaseInstalling, .. })
        ));
    }

    #[test]
    fn invalid_install_specs() {
        let mut s = spec(vec![Partition::new("/", 5, false)]);
        assert!(s.validate().is_err());
        s.partitions = vec![Partition::new("/", 5, true)];
        assert!(s.validate().is_err());
        s.partitions = vec![Partition::new("/data", 5, true)];
        assert!(s.validate().is_err());
    }

    #[test]
    fn hook_runs_once() {
        let mut n = VirtualNode::new("n1");
        n.begin_install(&spec(vec![])).unwrap();
        let reg = ComponentRegistry::standard();
        let mut src = ok_source(profile(pkgs()));
        assert!(matches!(n.boot(&mut src, &reg).unwrap(), BootOutcome::FirstBoot { ref failures } if failures.is_empty()));
        assert_eq!(n.phase(), Phase::Production);
        assert!(!n.state().firstboot_hook_armed);
        assert_eq!(n.boot(&mut src, &reg).unwrap(), BootOutcome::Reboot);
        assert_eq!(n.boot(&mut src, &reg).unwrap(), BootOutcome::Reboot);
        assert_eq!(n.hook_runs(), 1);
        assert_eq!(n.state().boot_count, 3);
        assert!(n.first_boot(&mut src, &reg).is_err());
    }

    #[test]
    fn profile_fetch_failure_leaves_node_configuring() {
        let mut n = VirtualNode::new("n1");
        n.begin_install(&spec(vec![])).unwrap();
        let mut failing = |_: &str| Err::<ProfileTree, _>("all replicas down".to_string());
        let err = n.first_boot(&mut failing, &ComponentRegistry::standard()).unwrap_err();
        assert!(matches!(err, AgentError::HookFailed { step: "fetch_profile", .. }));
        assert_eq!(n.phase(), Phase::Configuring);
        assert!(!n.state().firstboot_hook_armed);
        assert_eq!(n.errors().len(), 1);
        // operators recover by reinstalling
        n.begin_install(&spec(vec![])).unwrap();
        assert!(n.errors().is_empty());
    }

    #[test]
    fn first_boot_installs_profile_packages() {
        let mut n = VirtualNode::new("n1");
        n.begin_install(&spec(vec![])).unwrap();
        let p = profile(pkgs());
        n.first_boot(&mut ok_source(p.clone()), &ComponentRegistry::standard()).unwrap();
        assert_eq!(n.installed(), &DesiredList::from_profile(&p).unwrap().packages);
        assert_eq!(n.file("/etc/services.conf"), Some("sshd on\n"));
        assert_eq!(n.file("/etc/cluster.conf"), Some("/cluster/name = 'lxbatch'\n"));
    }

    #[test]
    fn components_are_idempotent_and_fast_path_matches_full_run() {
        let mut n = VirtualNode::new("n1");
        n.begin_install(&spec(vec![])).unwrap();
        let p = profile(pkgs());
        let reg = ComponentRegistry::standard();
        n.first_boot(&mut ok_source(p.clone()), &reg).unwrap();
        let d1 = n.state_digest();
        assert!(n.run_components(&p, &reg).is_empty());
        assert_eq!(n.state_digest(), d1);
        n.reboot().unwrap();
        n.run_components(&p, &reg);
        let fast = n.state_digest();
        n.run_components_forced(&p, &reg);
        assert_eq!(n.state_digest(), fast);
        assert_eq!(fast, d1);
    }

    struct Broken;
    impl ConfigComponent for Broken {
        fn name(&self) -> &str {
            "broken"
        }
        fn configure(&self, _: &ProfileTree, _: &VirtualNode) -> Result<BTreeMap<String, String>, String> {
            Err("boom".into())
        }
    }

    #[test]
    fn failed_component_does_not_stop_later_ones() {
        let reg = ComponentRegistry::empty()
            .with(Broken)
            .with(TreeFileComponent::new("cluster", "/cluster", "/etc/cluster.conf"));
        let mut n = VirtualNode::new("n1");
        n.begin_install(&spec(vec![])).unwrap();
        let p = profile(pkgs());
        match n.first_boot(&mut ok_source(p.clone()), &reg).unwrap() {
            BootOutcome::FirstBoot { failures } => assert_eq!(failures[0].component, "broken"),
            other => panic!("{other:?}"),
        }
        assert!(n.file("/etc/cluster.conf").is_some());
        assert_eq!(n.component_errors()["broken"], "boom");
        assert_eq!(n.phase(), Phase::Configuring);
        assert_eq!(n.config_marks().get("cluster"), Some(&1));
        assert_eq!(n.config_marks().get("broken"), None);
    }

    #[test]
    fn service_without_package_fails_component() {
        let mut n = VirtualNode::new("n1");
        n.begin_install(&spec(vec![])).unwrap();
        let p = profile("'/system/services/httpd' = {};");
        match n.first_boot(&mut ok_source(p), &ComponentRegistry::standard()).unwrap() {
            BootOutcome::FirstBoot { failures } => assert_eq!(failures[0].component, "system"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn digest_properties() {
        let reg = ComponentRegistry::standard();
        let p = profile(pkgs());
        let build = |name: &str| {
            let mut n = VirtualNode::new(name);
            n.begin_install(&spec(vec![])).unwrap();
            n.first_boot(&mut ok_source(p.clone()), &reg).unwrap();
            n
        };
        let (a, mut b) = (build("a"), build("b"));
        assert_eq!(a.state_digest(), b.state_digest());
        b.reboot().unwrap();
        b.install_secret("root_password", b"different".to_vec());
        assert_eq!(a.state_digest(), b.state_digest());
        let p2 = profile(&pkgs().replace("3.5p1", "3.6p1"));
        b.reconcile_packages(&p2).unwrap();
        assert_ne!(a.state_digest(), b.state_digest());
    }

    #[test]
    fn update_in_place_equals_reinstall() {
        let reg = ComponentRegistry::standard();
        let s = spec(vec![Partition::new("/data", 100, true)]);
        let p1 = profile(pkgs());
        let mut live = VirtualNode::new("n1");
        live.begin_install(&s).unwrap();
        live.first_boot(&mut ok_source(p1), &reg).unwrap();
        live.write_disk("/data", b"events");

        let mut p2 = profile(&pkgs().replace("3.5p1", "3.6p1").replace("lxbatch", "lxplus"));
        p2.generation = 2;
        live.update_in_place(&p2, &reg).unwrap();
        let fresh = simulate_reinstall(&live, &s, &p2, &reg).unwrap();
        assert_eq!(live.state_digest(), fresh.state_digest());
        assert_eq!(live.phase(), Phase::Production);
    }

    #[test]
    fn kernel_update_touches_only_the_kernel() {
        let reg = ComponentRegistry::standard();
        let mut n = VirtualNode::new("n1");
        n.begin_install(&spec(vec![])).unwrap();
        n.first_boot(&mut ok_source(profile(pkgs())), &reg).unwrap();
        let p2 = profile(&pkgs().replace("'20'", "'27'").replace("3.5p1", "3.6p1"));
        n.transition(Phase::Intervention).unwrap();
        let plan = n.kernel_update(&p2).unwrap();
        assert_eq!(plan.render(), "U kernel 2.4.20-20.i686→2.4.20-27.i686\n");
        assert_eq!(n.installed_version("openssh", "i386").unwrap(), "3.5p1-6.i386");
        assert_eq!(n.phase(), Phase::Production);
    }

    #[test]
    fn phase_graph() {
        use Phase::*;
        assert!(Unprovisioned.can_transition_to(BaseInstalling));
        assert!(!Unprovisioned.can_transition_to(Down));
        assert!(!Down.can_transition_to(Production));
        assert!(Draining.can_transition_to(Intervention));
        assert!(!Draining.can_transition_to(BaseInstalling));
        let mut n = VirtualNode::new("n");
        assert!(matches!(n.transition(Production), Err(AgentError::IllegalPhase { .. })));
        assert!(n.reboot().is_err());
    }
}
