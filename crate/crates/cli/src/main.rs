use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use fabric_core::batch::Workload;
use fabric_core::config::{compile_profile, parse_template, serialize_profile, GlobalSchema, TemplateSet};
use fabric_core::packages::{apply, plan, DesiredList, PackageSet, ReconcilePlan};
use fabric_core::rundown::RundownAction;
use fabric_core::sim::{site, Command, Scenario, SimOutcome, Simulation};

/// Operator tool for a simulated fabric of managed nodes.
#[derive(Parser)]
#[command(name = "fab", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the fleet simulator and print its trace.
    Sim {
        #[command(subcommand)]
        command: SimCmd,
    },
    /// Compile templates into node profiles.
    Compile(CompileArgs),
    /// Show the package actions that would bring a node to its desired list.
    Plan(PlanArgs),
    /// Apply the package plan for a node.
    Apply(PlanArgs),
    /// Reinstall a node inside the simulation.
    Reinstall {
        node: String,
        #[command(flatten)]
        sim: SimArgs,
    },
    /// Start an intervention rundown on a node or a whole cluster.
    Rundown(RundownArgs),
    /// Send a tag notification to every subscribed node.
    Notify {
        tag: String,
        #[command(flatten)]
        sim: SimArgs,
    },
    /// Show node, alarm, rundown or batch status.
    Status(StatusArgs),
    /// Batch scheduler tools.
    Batch {
        #[command(subcommand)]
        command: BatchCmd,
    },
}

#[derive(Subcommand)]
enum SimCmd {
    Run {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        until: u64,
    },
}

#[derive(Subcommand)]
enum BatchCmd {
    /// Replay a workload file and print per-group usage and pending reasons.
    Report {
        #[arg(long)]
        workload: PathBuf,
        /// Stop the replay at this time instead of running to completion.
        #[arg(long)]
        until: Option<u64>,
    },
}

/// Commands that act on a simulated site load its scenario, run it to
/// `--at`, do their work there and, if they change anything, keep running
/// until `--until`.
#[derive(Args)]
struct SimArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// When to act. Defaults to an hour after the last scripted event.
    #[arg(long)]
    at: Option<u64>,
    /// When to stop. Defaults to one maximum job runtime after `--at`.
    #[arg(long)]
    until: Option<u64>,
}

#[derive(Args)]
struct CompileArgs {
    /// Template files. Ignored when `--scenario` is given.
    files: Vec<PathBuf>,
    /// Compile the built-in site templates for this scenario's nodes.
    #[arg(long, conflicts_with = "files")]
    scenario: Option<PathBuf>,
    #[arg(long)]
    schema: Option<PathBuf>,
    /// Only this node.
    #[arg(long)]
    node: Option<String>,
    /// Write `<node>.profile` files here instead of printing.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PlanArgs {
    /// Node in the simulated site.
    #[arg(required_unless_present = "desired")]
    node: Option<String>,
    #[arg(long, requires = "installed", conflicts_with_all = ["node", "scenario"])]
    desired: Option<PathBuf>,
    /// Installed package list; `apply` rewrites it.
    #[arg(long, requires = "desired")]
    installed: Option<PathBuf>,
    #[arg(long, requires = "node")]
    scenario: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    at: Option<u64>,
}

#[derive(Args)]
struct RundownArgs {
    #[arg(required_unless_present = "cluster", conflicts_with = "cluster")]
    node: Option<String>,
    #[arg(long)]
    cluster: Option<String>,
    /// reboot, reinstall or kernel-update
    #[arg(long, value_parser = parse_action)]
    action: RundownAction,
    #[arg(long)]
    grace: Option<u64>,
    /// Cluster rundowns only.
    #[arg(long)]
    max_parallel: Option<usize>,
    #[command(flatten)]
    sim: SimArgs,
}

#[derive(Args)]
struct StatusArgs {
    #[arg(long, group = "view")]
    alarms: bool,
    #[arg(long, group = "view")]
    rundowns: bool,
    #[arg(long, group = "view")]
    batch: bool,
    #[command(flatten)]
    sim: SimArgs,
}

fn parse_action(text: &str) -> Result<RundownAction, String> {
    RundownAction::parse(text).ok_or_else(|| format!("unknown action `{text}`"))
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn load_scenario(path: &Path) -> Result<Scenario> {
    Scenario::parse(&read(path)?).with_context(|| format!("parsing {}", path.display()))
}

fn default_at(scenario: &Scenario) -> u64 {
    scenario.events.iter().map(|e| e.at).max().unwrap_or(0) + 3600
}

/// Prints the trace from `from` on and reports violations on stderr.
fn finish(outcome: &SimOutcome, from: u64) -> ExitCode {
    for line in &outcome.trace {
        let t: u64 = line
            .strip_prefix("t=")
            .and_then(|r| r.split(' ').next())
            .and_then(|t| t.parse().ok())
            .unwrap_or(0);
        if t >= from {
            println!("{line}");
        }
    }
    exit_for(outcome)
}

fn exit_for(outcome: &SimOutcome) -> ExitCode {
    for v in &outcome.violations {
        eprintln!("violation: {v}");
    }
    if outcome.ok() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

/// Adds `command` to the scenario at `--at`, runs it and prints what
/// happened from then on, followed by `status`.
fn inject(args: &SimArgs, command: Command, status: fn(&Simulation) -> String) -> Result<ExitCode> {
    let mut scenario = load_scenario(&args.scenario)?;
    let at = args.at.unwrap_or_else(|| default_at(&scenario));
    let horizon = scenario.max_runtime.unwrap_or(fabric_core::batch::DEFAULT_MAX_RUNTIME);
    let until = args.until.unwrap_or(at + horizon);
    if until < at {
        bail!("--until {until} is before --at {at}");
    }
    scenario.push(at, command);
    let (sim, outcome) = Simulation::run(&scenario, args.seed, until)?;
    let code = finish(&outcome, at);
    println!();
    print!("{}", status(&sim));
    Ok(code)
}

fn run_to(args: &SimArgs) -> Result<(Simulation, SimOutcome)> {
    let scenario = load_scenario(&args.scenario)?;
    let at = args.at.unwrap_or_else(|| default_at(&scenario));
    Ok(Simulation::run(&scenario, args.seed, at)?)
}

fn compile(args: &CompileArgs) -> Result<()> {
    let templates = match &args.scenario {
        Some(path) => site::site_templates(&load_scenario(path)?.nodes)?,
        None => {
            if args.files.is_empty() {
                bail!("give template files or --scenario");
            }
            let mut set = TemplateSet::new();
            for path in &args.files {
                let t = parse_template(&read(path)?).with_context(|| format!("parsing {}", path.display()))?;
                set.insert(t)?;
            }
            set
        }
    };
    let schema = match &args.schema {
        Some(path) => Some(GlobalSchema::parse(&read(path)?).with_context(|| format!("parsing {}", path.display()))?),
        None => None,
    };
    let nodes: Vec<String> = match &args.node {
        Some(n) => vec![n.clone()],
        None => templates.object_names().map(str::to_string).collect(),
    };
    if nodes.is_empty() {
        bail!("no object templates to compile");
    }
    if let Some(dir) = &args.out {
        fs::create_dir_all(dir)?;
    }
    for node in &nodes {
        let profile = compile_profile(&templates, node, schema.as_ref()).with_context(|| format!("compiling {node}"))?;
        let text = serialize_profile(&profile);
        match &args.out {
            Some(dir) => fs::write(dir.join(format!("{node}.profile")), text)?,
            None => {
                if nodes.len() > 1 {
                    println!("# {node}");
                }
                print!("{}", String::from_utf8_lossy(&text));
            }
        }
    }
    Ok(())
}

fn plan_or_apply(args: &PlanArgs, write: bool) -> Result<()> {
    if let (Some(desired), Some(installed)) = (&args.desired, &args.installed) {
        let wanted = DesiredList::new(PackageSet::parse(&read(desired)?)?, 0);
        let have = PackageSet::parse(&read(installed)?)?;
        let p = plan(&wanted, &have);
        print!("{}", p.render());
        if write {
            let result = apply(&p, &have)?;
            fs::write(installed, result.render())?;
        }
        return Ok(());
    }
    let node = args.node.as_deref().expect("clap requires a node");
    let scenario = args.scenario.clone().ok_or_else(|| anyhow!("--scenario is required with a node"))?;
    let (sim, _) = run_to(&SimArgs {
        scenario,
        seed: args.seed,
        at: args.at,
        until: None,
    })?;
    let agent = sim.node(node).ok_or_else(|| anyhow!("unknown node {node}"))?;
    let profile = sim.profiles().latest(node).ok_or_else(|| anyhow!("no profile for {node}"))?;
    let p: ReconcilePlan = plan(&DesiredList::from_profile(profile)?, agent.installed());
    print!("{}", p.render());
    if write {
        println!();
        print!("{}", apply(&p, agent.installed())?.render());
    }
    Ok(())
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Cmd::Sim {
            command: SimCmd::Run { scenario, seed, until },
        } => {
            let (_, outcome) = Simulation::run(&load_scenario(&scenario)?, seed, until)?;
            Ok(finish(&outcome, 0))
        }
        Cmd::Compile(args) => compile(&args).map(|_| ExitCode::SUCCESS),
        Cmd::Plan(args) => plan_or_apply(&args, false).map(|_| ExitCode::SUCCESS),
        Cmd::Apply(args) => plan_or_apply(&args, true).map(|_| ExitCode::SUCCESS),
        Cmd::Reinstall { node, sim } => inject(&sim, Command::Reinstall(node), Simulation::status_nodes),
        Cmd::Rundown(args) => {
            let command = match (args.node, args.cluster) {
                (Some(_), _) if args.max_parallel.is_some() => bail!("--max-parallel needs --cluster"),
                (Some(node), _) => Command::Rundown {
                    node,
                    action: args.action,
                    grace: args.grace,
                },
                (None, Some(cluster)) => Command::RundownCluster {
                    cluster,
                    action: args.action,
                    grace: args.grace,
                    max_parallel: args.max_parallel,
                },
                (None, None) => unreachable!("clap requires a node or a cluster"),
            };
            inject(&args.sim, command, Simulation::status_rundowns)
        }
        Cmd::Notify { tag, sim } => inject(&sim, Command::Notify(tag), Simulation::status_nodes),
        Cmd::Status(args) => {
            let (sim, outcome) = run_to(&args.sim)?;
            let text = if args.alarms {
                sim.status_alarms()
            } else if args.rundowns {
                sim.status_rundowns()
            } else if args.batch {
                sim.status_batch()
            } else {
                sim.status_nodes()
            };
            print!("{text}");
            Ok(exit_for(&outcome))
        }
        Cmd::Batch {
            command: BatchCmd::Report { workload, until },
        } => {
            let w = Workload::parse(&read(&workload)?).with_context(|| format!("parsing {}", workload.display()))?;
            let s = w.run(until)?;
            print!("{}", s.report(until.unwrap_or(s.clock())).render());
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("fab: {e:#}");
            ExitCode::from(2)
        }
    }
}
