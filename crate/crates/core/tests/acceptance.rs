//! Acceptance suite. Each criterion prints one `PASS`/`FAIL` line; the
//! binary exits non-zero if any criterion fails.
//!
//! Every check compares the library against an oracle written here from
//! scratch rather than against the library's own helpers.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use fabric_core::agent::{simulate_reinstall, BootMethod, ComponentRegistry, InstallSpec, Partition, Phase, VirtualNode};
use fabric_core::batch::{BatchConfig, BatchScheduler};
use fabric_core::bootstrap::{EncryptedSecret, KeyHandle, KeyServer};
use fabric_core::config::{ProfileRepository, ProfileTree, TemplateSet};
use fabric_core::notify::{NotifyClient, NotifyServer};
use fabric_core::packages::{apply, compare_versions, plan, DesiredList, PackageSet, PackageSpec};
use fabric_core::rundown::{barrier_rundown, fleet_rundown};
use fabric_core::sim::{Scenario, Simulation};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(cond: bool, what: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(what())
    }
}

fn within(elapsed: Duration, limit_secs: u64) -> Result<(), String> {
    check(elapsed < Duration::from_secs(limit_secs), || {
        format!("took {:.1}s, limit {limit_secs}s", elapsed.as_secs_f64())
    })
}

fn fixture(name: &str) -> String {
    let path = format!("{}/fixtures/{name}", env!("CARGO_MANIFEST_DIR"));
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{path}: {e}"))
}

// 1. Reinstall equivalence

const POOL: [&str; 8] = ["openssh", "sendmail", "xinetd", "perl", "python", "vim", "cvs", "ntp"];

/// A site whose templates are regenerated from scratch after every edit.
#[derive(Clone)]
struct SiteModel {
    packages: BTreeMap<&'static str, (u32, u32)>,
    services: BTreeMap<&'static str, &'static str>,
    users: BTreeMap<String, u32>,
    motd: String,
    lsf_release: u32,
    master: u32,
    ntp_servers: Vec<String>,
}

impl SiteModel {
    fn new() -> Self {
        Self {
            packages: [("openssh", (3, 1)), ("perl", (5, 1))].into_iter().collect(),
            services: [("sshd", "openssh")].into_iter().collect(),
            users: BTreeMap::new(),
            motd: "welcome".into(),
            lsf_release: 1,
            master: 1,
            ntp_servers: vec!["ip-time-1".into()],
        }
    }

    fn evolve(&mut self, rng: &mut ChaCha8Rng) {
        match rng.gen_range(0..9) {
            0 => {
                let name = *POOL.choose(rng).unwrap();
                self.packages.entry(name).or_insert((1, 1)).1 += 1;
            }
            1 => {
                let name = *POOL.choose(rng).unwrap();
                self.packages.insert(name, (rng.gen_range(1..4), rng.gen_range(1..4)));
            }
            2 => {
                let name = *POOL.choose(rng).unwrap();
                self.packages.remove(name);
                self.services.retain(|_, p| *p != name);
            }
            3 => {
                let names: Vec<_> = self.packages.keys().copied().collect();
                if let Some(p) = names.choose(rng) {
                    let svc = ["sshd", "sendmail", "xinetd", "ntpd"][rng.gen_range(0..4)];
                    self.services.insert(svc, p);
                }
            }
            4 => {
                let svcs: Vec<_> = self.services.keys().copied().collect();
                if let Some(s) = svcs.choose(rng) {
                    self.services.remove(s);
                }
            }
            5 => {
                self.users.insert(format!("user{}", rng.gen_range(0..6)), rng.gen_range(500..600));
            }
            6 => {
                let names: Vec<_> = self.users.keys().cloned().collect();
                if let Some(u) = names.choose(rng) {
                    self.users.remove(u);
                }
            }
            7 => {
                self.motd = format!("maintenance window {}", rng.gen_range(0..100));
                self.ntp_servers = (0..rng.gen_range(0..3)).map(|i| format!("ip-time-{i}")).collect();
            }
            _ => {
                self.lsf_release += 1;
                self.master = rng.gen_range(1..3);
            }
        }
    }

    fn templates(&self, nodes: &[(String, bool)]) -> TemplateSet {
        let mut base = String::from("include base;\n");
        base.push_str("'/software/packages/kernel' = { version = '2.4.20', release = '20', arch = 'i686' };\n");
        for (name, (v, r)) in &self.packages {
            base.push_str(&format!(
                "'/software/packages/{name}' = {{ version = '{v}.0', release = '{r}', arch = 'i386' }};\n"
            ));
        }
        for (svc, pkg) in &self.services {
            base.push_str(&format!("'/system/services/{svc}' = {{ package = '{pkg}' }};\n"));
        }
        for (user, uid) in &self.users {
            base.push_str(&format!("'/system/accounts/{user}' = {{ uid = {uid} }};\n"));
        }
        base.push_str(&format!("'/system/motd' = '{}';\n", self.motd));
        let servers: Vec<String> = self.ntp_servers.iter().map(|s| format!("'{s}'")).collect();
        base.push_str(&format!("'/system/ntp' = [{}];\n", servers.join(", ")));
        let batch = format!(
            "include batch;\ninclude base;\n'/cluster/name' = 'lxbatch';\n\
             '/software/packages/lsf' = {{ version = '4.2', release = '{}', arch = 'i386' }};\n\
             '/batch/master' = 'lsfmaster{}';\n",
            self.lsf_release, self.master
        );
        let disk = "include disk;\ninclude base;\n'/cluster/name' = 'lxdisk';\n".to_string();
        let mut texts = vec![base, batch, disk];
        for (name, is_disk) in nodes {
            texts.push(format!(
                "object {name};\ninclude {};\n'/system/hostname' = '{name}';\n",
                if *is_disk { "disk" } else { "batch" }
            ));
        }
        TemplateSet::parse_all(texts.iter().map(String::as_str)).expect("model renders valid templates")
    }
}

fn install_spec(disk: bool) -> InstallSpec {
    let mut partitions = vec![Partition::new("/", 8, false), Partition::new("/tmp", 2, false)];
    if disk {
        partitions.push(Partition::new("/data", 500, true));
    }
    InstallSpec {
        partitions,
        base_packages: DesiredList::new(
            PackageSet::parse("kernel 2.4.20 8 i686\nbash 2.05b 20 i386\nanaconda-runtime 9 1 i386\n").unwrap(),
            0,
        ),
        boot_method: BootMethod::Pxe,
    }
}

fn fresh_install(name: &str, spec: &InstallSpec, profile: &ProfileTree, registry: &ComponentRegistry) -> VirtualNode {
    let mut node = VirtualNode::new(name);
    node.begin_install(spec).unwrap();
    let mut source = |_: &str| Ok::<_, String>(profile.clone());
    node.first_boot(&mut source, registry).unwrap();
    node
}

fn reinstall_equivalence() -> Outcome {
    const SEQUENCES: usize = 100;
    const NODES: usize = 50;
    let started = Instant::now();
    let registry = ComponentRegistry::standard();
    let names: Vec<(String, bool)> = (0..NODES).map(|i| (format!("node{i:02}"), i % 10 == 0)).collect();
    let mut compared = 0;
    let mut changed_packages = 0usize;
    for seq in 0..SEQUENCES {
        let mut rng = ChaCha8Rng::seed_from_u64(seq as u64);
        let mut model = SiteModel::new();
        let mut repo = ProfileRepository::new();
        repo.recompile_all(&model.templates(&names), None).unwrap();
        let mut fleet: Vec<VirtualNode> = names
            .iter()
            .map(|(n, disk)| fresh_install(n, &install_spec(*disk), repo.latest(n).unwrap(), &registry))
            .collect();
        let steps = rng.gen_range(3..9);
        for step in 0..steps {
            for _ in 0..rng.gen_range(1..4) {
                model.evolve(&mut rng);
            }
            repo.recompile_all(&model.templates(&names), None).unwrap();
            let last = step + 1 == steps;
            for (node, (name, disk)) in fleet.iter_mut().zip(&names) {
                if *disk && rng.gen_bool(0.3) {
                    node.write_disk("/data", format!("{seq}-{step}").as_bytes());
                }
                if !last && rng.gen_bool(0.3) {
                    continue;
                }
                let profile = repo.latest(name).unwrap();
                if !last && rng.gen_bool(0.05) {
                    *node = simulate_reinstall(node, &install_spec(*disk), profile, &registry).unwrap();
                    continue;
                }
                let before = node.installed().clone();
                let failures = node.update_in_place(profile, &registry).unwrap();
                check(failures.is_empty(), || format!("{name}: component failures {failures:?}"))?;
                changed_packages += usize::from(&before != node.installed());
            }
        }
        for (node, (name, disk)) in fleet.iter().zip(&names) {
            let profile = repo.latest(name).unwrap();
            check(node.phase() == Phase::Production, || format!("{name} not in production"))?;
            check(node.applied_generation() == Some(profile.generation), || {
                format!("{name} did not reach generation {}", profile.generation)
            })?;
            let reinstalled = simulate_reinstall(node, &install_spec(*disk), profile, &registry).unwrap();
            check(reinstalled.state_digest() == node.state_digest(), || {
                format!("sequence {seq}: {name} differs after reinstall at generation {}", profile.generation)
            })?;
            compared += 1;
        }
    }
    check(changed_packages > SEQUENCES, || "evolution never changed installed packages".into())?;
    within(started.elapsed(), 30)?;
    Ok(format!(
        "{SEQUENCES} sequences x {NODES} nodes, {compared}/{compared} digests equal, {:.1}s",
        started.elapsed().as_secs_f64()
    ))
}

// Version and plan oracles.

#[derive(Debug, PartialEq, Eq)]
enum Tok {
    Num(u128),
    Alpha(String),
}

fn tokens(s: &str) -> Vec<Tok> {
    let mut out = Vec::new();
    let mut cur = String::new();
    let flush = |cur: &mut String, out: &mut Vec<Tok>| {
        if cur.is_empty() {
            return;
        }
        if cur.chars().all(|c| c.is_ascii_digit()) {
            out.push(Tok::Num(cur.parse().unwrap()));
        } else {
            out.push(Tok::Alpha(cur.clone()));
        }
        cur.clear();
    };
    for c in s.chars() {
        let same_class = cur
            .chars()
            .last()
            .is_none_or(|p| p.is_ascii_digit() == c.is_ascii_digit());
        if !c.is_ascii_alphanumeric() {
            flush(&mut cur, &mut out);
        } else {
            if !same_class {
                flush(&mut cur, &mut out);
            }
            cur.push(c);
        }
    }
    flush(&mut cur, &mut out);
    out
}

fn oracle_segments(a: &str, b: &str) -> Ordering {
    let (ta, tb) = (tokens(a), tokens(b));
    for i in 0..ta.len().max(tb.len()) {
        let ord = match (ta.get(i), tb.get(i)) {
            (Some(_), None) => Ordering::Greater,
            (None, Some(_)) => Ordering::Less,
            (Some(Tok::Num(x)), Some(Tok::Num(y))) => x.cmp(y),
            (Some(Tok::Alpha(x)), Some(Tok::Alpha(y))) => x.as_bytes().cmp(y.as_bytes()),
            (Some(Tok::Num(_)), Some(Tok::Alpha(_))) => Ordering::Greater,
            (Some(Tok::Alpha(_)), Some(Tok::Num(_))) => Ordering::Less,
            (None, None) => unreachable!(),
        };
        if ord != Ordering::Equal {
            return ord;
        }
    }
    Ordering::Equal
}

fn oracle_versions(a: &PackageSpec, b: &PackageSpec) -> Ordering {
    oracle_segments(&a.version, &b.version).then_with(|| oracle_segments(&a.release, &b.release))
}

fn random_version(rng: &mut ChaCha8Rng) -> String {
    const CHARS: &[u8] = b"0000123456789abcz._+~";
    loop {
        let len = rng.gen_range(1..10);
        let s: String = (0..len).map(|_| CHARS[rng.gen_range(0..CHARS.len())] as char).collect();
        if s.chars().any(|c| c.is_ascii_alphanumeric()) {
            return s;
        }
    }
}

fn version_totality() -> Outcome {
    let started = Instant::now();
    let spec = |v: &str, r: &str| PackageSpec::new("kernel", v, r, "i686").unwrap();
    // frozen by hand from the segment rule
    let frozen = [
        (("1.9", "1"), ("1.10", "1"), Ordering::Less),
        (("7.3", "1"), ("6.1", "1"), Ordering::Greater),
        (("2.4.20", "8"), ("2.4.20", "20.7"), Ordering::Less),
        (("1.0a", "1"), ("1.0", "1"), Ordering::Greater),
        (("1.0a", "1"), ("1.01", "1"), Ordering::Less),
        (("007", "1"), ("7", "1"), Ordering::Equal),
    ];
    for ((va, ra), (vb, rb), want) in frozen {
        let got = compare_versions(&spec(va, ra), &spec(vb, rb)).unwrap();
        check(got == want, || format!("{va}-{ra} vs {vb}-{rb}: got {got:?}, want {want:?}"))?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    const PAIRS: usize = 20_000;
    for _ in 0..PAIRS {
        let a = spec(&random_version(&mut rng), &random_version(&mut rng));
        let b = spec(&random_version(&mut rng), &random_version(&mut rng));
        let got = compare_versions(&a, &b).unwrap();
        check(got == oracle_versions(&a, &b), || format!("{} vs {}: got {got:?}", a.evr(), b.evr()))?;
        check(compare_versions(&b, &a).unwrap() == got.reverse(), || format!("{} vs {} not antisymmetric", a.evr(), b.evr()))?;
    }
    let sample: Vec<PackageSpec> = (0..300)
        .map(|_| spec(&random_version(&mut rng), &random_version(&mut rng)))
        .collect();
    const TRIPLES: usize = 20_000;
    for _ in 0..TRIPLES {
        let (a, b, c) = (
            sample.choose(&mut rng).unwrap(),
            sample.choose(&mut rng).unwrap(),
            sample.choose(&mut rng).unwrap(),
        );
        let le = |x: &PackageSpec, y: &PackageSpec| compare_versions(x, y).unwrap() != Ordering::Greater;
        if le(a, b) && le(b, c) {
            check(le(a, c), || format!("{} <= {} <= {} but not {0} <= {2}", a.evr(), b.evr(), c.evr()))?;
        }
    }
    Ok(format!(
        "{PAIRS} pairs agree with oracle, {TRIPLES} triples transitive, {:.1}s",
        started.elapsed().as_secs_f64()
    ))
}

fn random_set(rng: &mut ChaCha8Rng) -> PackageSet {
    const NAMES: [&str; 8] = ["bash", "glibc", "kernel", "openssh", "lsf", "perl", "vim", "ntp"];
    const ARCHES: [&str; 3] = ["i386", "i686", "noarch"];
    const VERSIONS: [&str; 7] = ["1.0", "1_0", "01.0", "1.1", "1.10", "2.0a", "2.0"];
    let mut set = PackageSet::new();
    for _ in 0..rng.gen_range(0..12) {
        let spec = PackageSpec::new(
            *NAMES.choose(rng).unwrap(),
            *VERSIONS.choose(rng).unwrap(),
            rng.gen_range(1..4).to_string(),
            *ARCHES.choose(rng).unwrap(),
        )
        .unwrap();
        let _ = set.insert(spec);
    }
    set
}

fn evr(s: &PackageSpec) -> String {
    format!("{}-{}.{}", s.version, s.release, s.arch)
}

/// Key-by-key diff: every (name, arch) on either side is classified on its own.
fn oracle_plan(desired: &PackageSet, installed: &PackageSet) -> Vec<String> {
    let index = |set: &PackageSet| -> BTreeMap<(String, String), PackageSpec> {
        set.iter().map(|s| ((s.name.clone(), s.arch.clone()), s.clone())).collect()
    };
    let (want, have) = (index(desired), index(installed));
    let keys: BTreeSet<&(String, String)> = want.keys().chain(have.keys()).collect();
    let mut classes: [Vec<String>; 4] = Default::default();
    for k in keys {
        match (want.get(k), have.get(k)) {
            (None, Some(h)) => classes[0].push(format!("R {} {}→-", h.name, evr(h))),
            (Some(w), None) => classes[3].push(format!("I {} -→{}", w.name, evr(w))),
            (Some(w), Some(h)) => {
                let ord = oracle_versions(w, h)
                    .then_with(|| w.version.as_bytes().cmp(h.version.as_bytes()))
                    .then_with(|| w.release.as_bytes().cmp(h.release.as_bytes()));
                match ord {
                    Ordering::Less => classes[1].push(format!("D {} {}→{}", w.name, evr(h), evr(w))),
                    Ordering::Greater => classes[2].push(format!("U {} {}→{}", w.name, evr(h), evr(w))),
                    Ordering::Equal => {}
                }
            }
            (None, None) => unreachable!(),
        }
    }
    classes.concat()
}

fn reconciler_exactness() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    const PAIRS: usize = 10_000;
    let mut actions = 0;
    for i in 0..PAIRS {
        let desired = random_set(&mut rng);
        let installed = random_set(&mut rng);
        let p = plan(&DesiredList::new(desired.clone(), 1), &installed);
        let got: Vec<String> = p.actions.iter().map(ToString::to_string).collect();
        let want = oracle_plan(&desired, &installed);
        check(got == want, || format!("pair {i}: plan {got:?}, oracle {want:?}"))?;
        let after = apply(&p, &installed).map_err(|e| format!("pair {i}: {e}"))?;
        let as_lines = |s: &PackageSet| s.iter().map(evr_line).collect::<BTreeSet<_>>();
        check(as_lines(&after) == as_lines(&desired), || format!("pair {i}: apply did not reach desired"))?;
        actions += got.len();
    }
    within(started.elapsed(), 10)?;
    Ok(format!(
        "{PAIRS} pairs, {actions} actions, 100% agreement, {:.1}s",
        started.elapsed().as_secs_f64()
    ))
}

fn evr_line(s: &PackageSpec) -> String {
    format!("{} {}", s.name, evr(s))
}

// 4. Fairshare

/// Usage integrated with small Euler steps, independent of the closed form.
fn euler_usage(start: f64, rate: f64, secs: f64, half_life: f64) -> f64 {
    let steps = 100_000;
    let dt = secs / steps as f64;
    let k = std::f64::consts::LN_2 / half_life;
    let mut u = start;
    for _ in 0..steps {
        u += (rate - k * u) * dt;
    }
    u
}

fn saturated(shares: &[(&str, f64)], active: &[&str], half_lives: u64) -> (BatchScheduler, u64) {
    const HALF_LIFE: u64 = 3600;
    const SLOTS: u32 = 10;
    const RUNTIME: u64 = 600;
    let mut s = BatchScheduler::new(BatchConfig { half_life: HALF_LIFE, max_runtime: RUNTIME }, shares).unwrap();
    s.add_host("lxb01", SLOTS / 2).unwrap();
    s.add_host("lxb02", SLOTS / 2).unwrap();
    let horizon = half_lives * HALF_LIFE;
    let mut t = 0;
    while t < horizon {
        for g in active {
            while s.jobs().filter(|j| j.group == *g && j.state == fabric_core::batch::JobState::Pending).count() < SLOTS as usize {
                s.submit(g, RUNTIME, t).unwrap();
            }
        }
        s.schedule_tick(t);
        t = s.next_completion().unwrap_or(horizon).min(horizon);
    }
    s.schedule_tick(horizon);
    (s, horizon)
}

fn fairshare() -> Outcome {
    let started = Instant::now();
    // frozen: one half-life of one busy CPU from zero is H / (2 ln 2)
    let expected = 2_596.851_073_600_134;
    let mut s = BatchScheduler::new(BatchConfig { half_life: 3600, max_runtime: 7200 }, &[("a", 1.0)]).unwrap();
    s.add_host("h", 1).unwrap();
    s.submit("a", 7200, 0).unwrap();
    s.schedule_tick(0);
    let closed = s.decayed_usage("a", 3600).unwrap();
    let euler = euler_usage(0.0, 1.0, 3600.0, 3600.0);
    check((closed - expected).abs() < 1e-6 && (euler - expected).abs() < 1e-2, || {
        format!("decay: closed form {closed}, euler {euler}, frozen {expected}")
    })?;

    const HALF_LIVES: u64 = 60;
    let shares = [("atlas", 0.6), ("cms", 0.4)];
    let (s, horizon) = saturated(&shares, &["atlas", "cms"], HALF_LIVES);
    let report = s.report(horizon);
    let total: f64 = report.rows.iter().map(|r| r.cpu_seconds).sum();
    let mut split = Vec::new();
    for r in &report.rows {
        let fraction = r.cpu_seconds / total;
        check((fraction - r.share).abs() <= 0.05 * r.share, || {
            format!("{} used {fraction:.4} of the cluster, share {}", r.group, r.share)
        })?;
        split.push(format!("{}={fraction:.3}", r.group));
    }
    let (s, horizon) = saturated(&shares, &["cms"], HALF_LIVES);
    let used = s.report(horizon).rows.iter().map(|r| r.cpu_seconds).sum::<f64>() / (10 * horizon) as f64;
    check(used >= 0.99, || format!("lone group used {used:.4} of capacity"))?;
    within(started.elapsed(), 60)?;
    Ok(format!(
        "{HALF_LIVES} half-lives, split {}, lone group {:.1}% of capacity, {:.1}s",
        split.join(" "),
        used * 100.0,
        started.elapsed().as_secs_f64()
    ))
}

// 5. Drain safety

/// Independent trace scan: a host is closed from `host_close` or
/// `host_remove` until `host_open` or `host_add`.
fn assigns_to_closed_hosts(trace: &[String]) -> Vec<String> {
    let mut closed = BTreeSet::new();
    let mut bad = Vec::new();
    for line in trace {
        let field = |k: &str| {
            line.split(' ')
                .find_map(|w| w.strip_prefix(k).and_then(|r| r.strip_prefix('=')))
                .map(str::to_string)
        };
        match field("ev").as_deref() {
            Some("host_close") | Some("host_remove") => {
                closed.insert(field("host").unwrap());
            }
            Some("host_open") | Some("host_add") => {
                closed.remove(&field("host").unwrap());
            }
            Some("assign") if closed.contains(&field("host").unwrap()) => bad.push(line.clone()),
            _ => {}
        }
    }
    bad
}

fn random_rundown_scenario(rng: &mut ChaCha8Rng) -> String {
    let n = rng.gen_range(3..7);
    let mut text = format!("replica cfg01\nreplica cfg02\ngroup a share=0.5\ngroup b share=0.5\nnodes lxb {n} kind=batch slots=2\nat 0 install all\n");
    for _ in 0..rng.gen_range(5..20) {
        let g = if rng.gen_bool(0.5) { "a" } else { "b" };
        text.push_str(&format!(
            "at {} submit {g} {} count={}\n",
            rng.gen_range(800..5000),
            rng.gen_range(60..20_000),
            rng.gen_range(1..4)
        ));
    }
    let action = ["reboot", "reinstall", "kernel-update"][rng.gen_range(0..3)];
    if rng.gen_bool(0.5) {
        text.push_str(&format!(
            "at {} rundown-cluster lxbatch action={action} max-parallel={}\n",
            rng.gen_range(1000..6000),
            rng.gen_range(1..3)
        ));
    } else {
        for i in 1..=n {
            if rng.gen_bool(0.6) {
                text.push_str(&format!("at {} rundown lxb{i:03} action={action}\n", rng.gen_range(1000..6000)));
            }
        }
    }
    if rng.gen_bool(0.3) {
        text.push_str(&format!("at {} fail lxb{:03}\n", rng.gen_range(1000..8000), rng.gen_range(1..=n)));
    }
    text
}

fn drain_safety() -> Outcome {
    let started = Instant::now();
    let scenario = Scenario::parse(&fixture("rundown_spread.scn")).map_err(|e| e.to_string())?;
    let (sim, out) = Simulation::run(&scenario, 1, 700_000).map_err(|e| e.to_string())?;
    check(out.violations.is_empty(), || format!("violations {:?}", out.violations))?;
    let bad = assigns_to_closed_hosts(&out.trace);
    check(bad.is_empty(), || format!("assignments to closed hosts: {bad:?}"))?;

    let mut drains: Vec<(String, u64)> = sim
        .rundowns()
        .history()
        .iter()
        .map(|s| (s.plan.node.clone(), s.ready_at.unwrap() - s.plan.requested_at))
        .collect();
    drains.sort();
    let minutes: Vec<u64> = drains.iter().map(|d| d.1 / 60).collect();
    check(minutes == [10, 10080, 0], || format!("drain minutes {minutes:?}"))?;
    let act = scenario.timing.reboot;
    let fleet = fleet_rundown(&drains, act, None).map_err(|e| e.to_string())?;
    let barrier = barrier_rundown(&drains, act, None).map_err(|e| e.to_string())?;
    // frozen: 3 x 120 s against (604920 - 0) + (604920 - 600) + 120 s
    check(fleet.lost_node_time() == 360 && barrier.lost_node_time() == 1_209_360, || {
        format!("lost node-seconds fleet {} barrier {}", fleet.lost_node_time(), barrier.lost_node_time())
    })?;
    check(fleet.lost_node_time() < barrier.lost_node_time(), || "per-node rundown not better".into())?;
    for s in sim.rundowns().history() {
        let planned = fleet.get(&s.plan.node).unwrap();
        let acted = s.acting_at.unwrap() - s.plan.requested_at;
        check(acted == planned.act_start, || {
            format!("{} acted after {acted}s, schedule says {}", s.plan.node, planned.act_start)
        })?;
    }

    let mut traces = 1;
    for seed in 0..40 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let text = random_rundown_scenario(&mut rng);
        let scenario = Scenario::parse(&text).map_err(|e| format!("{e}\n{text}"))?;
        let (_, out) = Simulation::run(&scenario, seed, 200_000).map_err(|e| e.to_string())?;
        let bad = assigns_to_closed_hosts(&out.trace);
        check(bad.is_empty(), || format!("seed {seed}: {bad:?}"))?;
        check(out.violations.is_empty(), || format!("seed {seed}: {:?}", out.violations))?;
        traces += 1;
    }
    Ok(format!(
        "{traces} traces with 0 closed-host assignments, lost node-minutes {} per-node vs {} barrier, {:.1}s",
        fleet.lost_node_time() / 60,
        barrier.lost_node_time() / 60,
        started.elapsed().as_secs_f64()
    ))
}

// 6. Key window

#[derive(Default)]
struct NodeModel {
    epoch: u64,
    window: Option<(u64, u64, bool)>,
}

fn key_window() -> Outcome {
    let started = Instant::now();
    const SCHEDULES: u64 = 1_000;
    let nodes = ["n1", "n2", "n3"];
    let (mut fetches, mut decrypts, mut refused) = (0, 0, 0);
    for seed in 0..SCHEDULES {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut server = KeyServer::with_seed(seed);
        let mut model: BTreeMap<&str, NodeModel> = nodes.iter().map(|n| (*n, NodeModel::default())).collect();
        let mut handles: Vec<KeyHandle> = Vec::new();
        let mut blobs: Vec<(EncryptedSecret, Vec<u8>)> = Vec::new();
        let mut per_window: BTreeMap<(&str, u64), u32> = BTreeMap::new();
        let mut now = 0u64;
        for _ in 0..40 {
            now += rng.gen_range(0..40);
            let node = *nodes.choose(&mut rng).unwrap();
            let m = model.get_mut(node).unwrap();
            match rng.gen_range(0..5) {
                0 => {
                    server.rekey(node, now).unwrap();
                    m.epoch += 1;
                }
                1 => {
                    let len = rng.gen_range(1..60);
                    let busy = matches!(m.window, Some((_, close, fetched)) if !fetched && now < close);
                    let got = server.open_window(node, now, len);
                    check(got.is_ok() != busy, || format!("seed {seed}: open_window {node} at {now}: {got:?}"))?;
                    if got.is_ok() {
                        m.window = Some((now, now + len, false));
                    }
                }
                2 => {
                    let allowed = m.epoch > 0
                        && matches!(m.window, Some((open, close, fetched)) if !fetched && open <= now && now < close);
                    let got = server.fetch_private_key(node, now);
                    check(got.is_ok() == allowed, || format!("seed {seed}: fetch {node} at {now}: {got:?}"))?;
                    if let Ok(h) = got {
                        let w = m.window.as_mut().unwrap();
                        w.2 = true;
                        *per_window.entry((node, w.0)).or_default() += 1;
                        check(h.epoch == m.epoch, || format!("seed {seed}: handle epoch {}", h.epoch))?;
                        handles.push(h);
                        fetches += 1;
                    }
                }
                3 => {
                    if m.epoch > 0 {
                        let payload: Vec<u8> = (0..16).map(|_| rng.gen()).collect();
                        let blob = server.encrypt_secret(node, "root_password", &payload).unwrap();
                        blobs.push((blob, payload));
                    }
                }
                _ => {
                    if let (Some(h), Some((blob, payload))) = (handles.choose(&mut rng), blobs.choose(&mut rng)) {
                        let current = model[h.node.as_str()].epoch;
                        let allowed = h.node == blob.node && h.epoch == blob.key_epoch && h.epoch == current;
                        let got = server.decrypt_secret(h, blob);
                        check(got.is_ok() == allowed, || {
                            format!("seed {seed}: decrypt {}@{} blob {}@{}: {got:?}", h.node, h.epoch, blob.node, blob.key_epoch)
                        })?;
                        match got {
                            Ok(plain) => {
                                check(&plain == payload, || format!("seed {seed}: wrong plaintext"))?;
                                decrypts += 1;
                            }
                            Err(_) => refused += 1,
                        }
                    }
                }
            }
        }
        check(per_window.values().all(|&n| n <= 1), || format!("seed {seed}: {per_window:?}"))?;
    }
    Ok(format!(
        "{SCHEDULES} schedules, {fetches} in-window fetches, 0 outside or repeated, {decrypts} same-epoch decrypts, {refused} cross-epoch refused, {:.1}s",
        started.elapsed().as_secs_f64()
    ))
}

// 7. Notification completeness

fn notification_completeness() -> Outcome {
    let started = Instant::now();
    const SCHEDULES: u64 = 1_000;
    let clients = ["c1", "c2", "c3"];
    let tags = ["rpmupdate", "confupdate", "kernelupdate"];
    let mut delivered = 0;
    for seed in 0..SCHEDULES {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut server = NotifyServer::new();
        let mut receivers: BTreeMap<&str, NotifyClient> = clients.iter().map(|c| (*c, NotifyClient::new())).collect();
        let mut subscribed: BTreeSet<(&str, &str)> = BTreeSet::new();
        let mut expected: BTreeMap<(&str, &str), Vec<u64>> = BTreeMap::new();
        let mut got: BTreeMap<(String, String), Vec<u64>> = BTreeMap::new();
        let mut known: BTreeSet<&str> = BTreeSet::new();
        let mut receive = |server: &mut NotifyServer, receivers: &mut BTreeMap<&str, NotifyClient>, c: &str, ack: bool| {
            let Ok(batch) = server.deliver(c) else { return Ok(()) };
            let mut last: BTreeMap<String, u64> = BTreeMap::new();
            for e in &batch {
                let prev = last.insert(e.tag.as_str().to_string(), e.seq);
                if prev.is_some_and(|p| p >= e.seq) {
                    return Err(format!("seed {seed}: {c} got {} out of order", e.tag.as_str()));
                }
            }
            for e in receivers.get_mut(c).unwrap().accept(&batch) {
                got.entry((c.to_string(), e.tag.as_str().to_string())).or_default().push(e.seq);
            }
            if ack {
                for (tag, seq) in last {
                    server.ack(c, &tag, seq).unwrap();
                }
            }
            Ok(())
        };
        for t in 0..60u64 {
            let c = *clients.choose(&mut rng).unwrap();
            let tag = *tags.choose(&mut rng).unwrap();
            match rng.gen_range(0..7) {
                0 => {
                    server.subscribe(c, tag, t).unwrap();
                    subscribed.insert((c, tag));
                    known.insert(c);
                }
                1 => {
                    server.unsubscribe(c, tag).unwrap();
                    subscribed.remove(&(c, tag));
                }
                2 | 3 => {
                    let (event, _) = server.notify(tag, t).unwrap();
                    for &(sc, st) in &subscribed {
                        if st == tag {
                            expected.entry((sc, st)).or_default().push(event.seq);
                        }
                    }
                }
                4 => {
                    if known.contains(c) {
                        server.disconnect(c).unwrap();
                    }
                }
                5 => server.connect(c),
                _ => receive(&mut server, &mut receivers, c, rng.gen_bool(0.6))?,
            }
        }
        for c in clients {
            server.connect(c);
            receive(&mut server, &mut receivers, c, true)?;
        }
        for ((c, tag), want) in &expected {
            let have = got.get(&(c.to_string(), tag.to_string())).cloned().unwrap_or_default();
            check(&have == want, || format!("seed {seed}: {c}/{tag} got {have:?}, want {want:?}"))?;
            delivered += want.len();
        }
        let extra: usize = got.values().map(Vec::len).sum::<usize>() - expected.values().map(Vec::len).sum::<usize>();
        check(extra == 0, || format!("seed {seed}: {extra} events delivered outside subscriptions"))?;
    }
    Ok(format!(
        "{SCHEDULES} schedules, {delivered}/{delivered} subscribed events delivered in order, {:.1}s",
        started.elapsed().as_secs_f64()
    ))
}

// 8. Scale and determinism

fn scale_and_determinism() -> Outcome {
    let started = Instant::now();
    let scenario = Scenario::parse(&fixture("storm1000.scn")).map_err(|e| e.to_string())?;
    check(scenario.nodes.len() == 1000, || format!("{} nodes", scenario.nodes.len()))?;
    let until = 10_000;
    let (sim, first) = Simulation::run(&scenario, 2003, until).map_err(|e| e.to_string())?;
    let (_, second) = Simulation::run(&scenario, 2003, until).map_err(|e| e.to_string())?;
    let production = sim.count_in_phase(Phase::Production);
    check(production == 1000, || format!("{production} of 1000 nodes in production"))?;
    check(first.violations.is_empty(), || format!("violations {:?}", first.violations))?;
    check(first.trace.iter().any(|l| l.contains("ev=replica_fail")), || "no replica failure".into())?;
    check(first.stats.retries > 0, || "the dead replica was never hit".into())?;
    check(first.stats.failed_requests == 0 && first.stats.install_failures == 0, || {
        format!("{} failed requests, {} failed installs", first.stats.failed_requests, first.stats.install_failures)
    })?;
    check(first.trace_text() == second.trace_text(), || "traces differ between runs".into())?;
    within(started.elapsed(), 120)?;
    Ok(format!(
        "1000/1000 in production, {} retries, 0 failed requests, {} identical trace lines, {:.1}s",
        first.stats.retries,
        first.trace.len(),
        started.elapsed().as_secs_f64()
    ))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        ("reinstall equivalence", reinstall_equivalence),
        ("reconciler exactness", reconciler_exactness),
        ("version order totality", version_totality),
        ("fairshare", fairshare),
        ("drain safety", drain_safety),
        ("key window", key_window),
        ("notification completeness", notification_completeness),
        ("scale and determinism", scale_and_determinism),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        match run() {
            Ok(detail) => println!("acceptance {} {name}: PASS ({detail})", i + 1),
            Err(why) => {
                failed += 1;
                println!("acceptance {} {name}: FAIL ({why})", i + 1);
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
