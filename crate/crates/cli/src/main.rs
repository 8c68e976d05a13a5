mod config;

use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use ckstab::daemon::{Daemon, DaemonPolicy};
use ckstab::engine::{default_step_budget, enabled_nodes, execute, Outcome};
use ckstab::explorer::{explore, ExploreOptions, InitDomain, DEFAULT_BUDGET, DEFAULT_MAX_N};
use ckstab::kcluster::{CkState, PotentialMonitor, SamplerOptions};
use ckstab::speccheck::{check_terminal, cluster_dot, Report};
use ckstab::topology::{build_spanning_tree, to_dot, GraphKind};
use ckstab::trace::write_jsonl;
use ckstab::{ClusterInstance, Configuration, NodeId};
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use config::{instance_on, ExperimentConfig, GraphSource, IdAssignment, InitKind};

const RUN_SCHEMA: &str = "ckstab.run.v1";
const CHECK_SCHEMA: &str = "ckstab.check.v1";
const EXPLORE_SCHEMA: &str = "ckstab.explore.v1";

#[derive(Parser)]
#[command(name = "ckstab", version, about = "Simulate and verify the self-stabilizing k-clustering algorithm C(k)")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print a generated network as an edge list.
    Generate {
        #[arg(long)]
        kind: GraphKind,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run independent executions and report termination, measure and
    /// legitimacy verdicts.
    Run(RunArgs),
    /// Check a configuration claimed terminal.
    Check {
        /// Configuration as a JSON array of node states.
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        graph: GraphArgs,
        #[arg(long)]
        k: i64,
    },
    /// Exhaustively explore every execution of a small instance.
    Explore {
        #[command(flatten)]
        graph: GraphArgs,
        #[arg(long, default_value_t = 0)]
        root: usize,
        #[arg(long, default_value_t = 1)]
        k: i64,
        #[arg(long, default_value_t = DEFAULT_BUDGET)]
        budget: u64,
        /// Start from this many sampled configurations instead of all of them.
        #[arg(long)]
        sampled: Option<u64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = DEFAULT_MAX_N)]
        max_n: usize,
        /// Write the lasso of a cycle here when one is found.
        #[arg(long)]
        lasso_out: Option<PathBuf>,
    },
    /// Print a Graphviz rendering of a network, or of a clustering when a
    /// configuration is given.
    Dot {
        #[command(flatten)]
        graph: GraphArgs,
        #[arg(long, default_value_t = 0)]
        root: usize,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        k: i64,
    },
}

#[derive(Args)]
struct GraphArgs {
    /// Generator name (path, star, ring-plus-chord, random-tree,
    /// random-connected) or edge-list file.
    #[arg(long, default_value = "path")]
    graph: String,
    #[arg(long, default_value_t = 3)]
    n: usize,
    #[arg(long = "graph-seed", default_value_t = 0)]
    graph_seed: u64,
}

impl GraphArgs {
    fn network(&self) -> Result<ckstab::Network> {
        GraphSource::parse(&self.graph).load(self.n, self.graph_seed)
    }
}

#[derive(Args)]
struct RunArgs {
    /// TOML experiment file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    graph: Option<String>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    root: Option<usize>,
    #[arg(long)]
    k: Option<i64>,
    /// sync, central, rr, random[:p] or lazy.
    #[arg(long)]
    daemon: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trials: Option<u64>,
    #[arg(long)]
    max_steps: Option<usize>,
    #[arg(long)]
    ids: Option<IdAssignment>,
    #[arg(long)]
    init: Option<InitKind>,
    #[arg(long)]
    inject_bad_channels: bool,
    #[arg(long)]
    no_monitor: bool,
    #[arg(long)]
    no_legitimacy: bool,
    /// Write the summary here instead of stdout.
    #[arg(long)]
    summary: Option<PathBuf>,
    /// Write one JSON-lines trace per trial into this directory.
    #[arg(long)]
    trace_dir: Option<PathBuf>,
}

impl clap::ValueEnum for IdAssignment {
    fn value_variants<'a>() -> &'a [Self] {
        &[IdAssignment::Identity, IdAssignment::Permuted]
    }

    fn to_possible_value(&self) -> Option<clap::builder::PossibleValue> {
        Some(clap::builder::PossibleValue::new(match self {
            IdAssignment::Identity => "identity",
            IdAssignment::Permuted => "permuted",
        }))
    }
}

impl clap::ValueEnum for InitKind {
    fn value_variants<'a>() -> &'a [Self] {
        &[InitKind::Random, InitKind::Zero]
    }

    fn to_possible_value(&self) -> Option<clap::builder::PossibleValue> {
        Some(clap::builder::PossibleValue::new(match self {
            InitKind::Random => "random",
            InitKind::Zero => "zero",
        }))
    }
}

impl RunArgs {
    fn resolve(self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::from_file(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(g) = self.graph {
            cfg.graph = GraphSource::parse(&g);
        }
        macro_rules! set {
            ($($field:ident),*) => { $(if let Some(v) = self.$field { cfg.$field = v; })* };
        }
        set!(n, root, k, daemon, seed, trials, ids, init);
        if self.max_steps.is_some() {
            cfg.max_steps = self.max_steps;
        }
        cfg.inject_bad_channels |= self.inject_bad_channels;
        cfg.monitor &= !self.no_monitor;
        cfg.legitimacy &= !self.no_legitimacy;
        if self.summary.is_some() {
            cfg.summary = self.summary;
        }
        if self.trace_dir.is_some() {
            cfg.trace_dir = self.trace_dir;
        }
        Ok(cfg)
    }
}

#[derive(Serialize)]
struct TrialResult {
    trial: u64,
    outcome: Outcome,
    steps: usize,
    clusterheads: usize,
    failed_clauses: Vec<String>,
    #[serde(skip)]
    trace: Option<ckstab::ExecutionTrace<CkState>>,
}

impl TrialResult {
    fn passed(&self) -> bool {
        self.outcome == Outcome::Terminal && self.failed_clauses.is_empty()
    }
}

#[derive(Serialize)]
struct RunSummary<'a> {
    schema: &'static str,
    config: &'a ExperimentConfig,
    n: usize,
    k: i64,
    clusterhead_bound: usize,
    trials: u64,
    terminal: u64,
    budget_exceeded: u64,
    monitor_violations: u64,
    legitimacy_failures: u64,
    max_clusterheads: usize,
    total_steps: u64,
    passed: bool,
    results: &'a [TrialResult],
}

fn run_trial(inst: &ClusterInstance, cfg: &ExperimentConfig, policy: DaemonPolicy, trial: u64) -> Result<TrialResult> {
    // stream 2t feeds the sampler, 2t+1 the daemon
    let mut sampler = ChaCha8Rng::seed_from_u64(cfg.seed);
    sampler.set_stream(2 * trial);
    let mut daemon_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    daemon_rng.set_stream(2 * trial + 1);
    let g0 = match cfg.init {
        InitKind::Random => {
            inst.sample_config(&mut sampler, SamplerOptions { inject_bad_channels: cfg.inject_bad_channels })
        }
        InitKind::Zero => inst.zero_config(),
    };
    let mut daemon = Daemon::with_rng(policy, daemon_rng);
    let budget = cfg.max_steps.unwrap_or_else(|| default_step_budget(inst.n()));
    let mut monitor = PotentialMonitor::new(inst);
    let trace = if cfg.monitor {
        execute(inst.alg(), inst.net(), g0, &mut daemon, budget, &mut [&mut monitor])?
    } else {
        execute(inst.alg(), inst.net(), g0, &mut daemon, budget, &mut [])?
    };
    let clusterheads = trace.last.states().iter().filter(|s| s.head_c == s.id).count();
    let mut failed_clauses = Vec::new();
    if cfg.legitimacy && trace.outcome == Outcome::Terminal {
        let report = check_terminal(inst, &trace.last);
        failed_clauses = report.failed().into_iter().map(String::from).collect();
        if clusterheads > inst.clusterhead_bound() && failed_clauses.is_empty() {
            failed_clauses.push("clusterhead_bound".into());
        }
    }
    Ok(TrialResult {
        trial,
        outcome: trace.outcome.clone(),
        steps: trace.step_count(),
        clusterheads,
        failed_clauses,
        trace: cfg.trace_dir.is_some().then_some(trace),
    })
}

fn cmd_run(args: RunArgs) -> Result<bool> {
    let cfg = args.resolve()?;
    let policy: DaemonPolicy = cfg.daemon.parse().map_err(anyhow::Error::msg)?;
    if cfg.trials == 0 {
        bail!("trials must be positive");
    }
    let inst = cfg.instance()?;
    let results: Vec<TrialResult> =
        (0..cfg.trials).into_par_iter().map(|t| run_trial(&inst, &cfg, policy, t)).collect::<Result<_>>()?;

    if let Some(dir) = &cfg.trace_dir {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        for r in &results {
            let path = dir.join(format!("trial-{:05}.jsonl", r.trial));
            let file = fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
            write_jsonl(&inst, r.trace.as_ref().expect("kept when tracing"), std::io::BufWriter::new(file))?;
        }
    }
    let count = |f: &dyn Fn(&TrialResult) -> bool| results.iter().filter(|r| f(r)).count() as u64;
    let summary = RunSummary {
        schema: RUN_SCHEMA,
        config: &cfg,
        n: inst.n(),
        k: inst.k(),
        clusterhead_bound: inst.clusterhead_bound(),
        trials: cfg.trials,
        terminal: count(&|r| r.outcome == Outcome::Terminal),
        budget_exceeded: count(&|r| r.outcome == Outcome::BudgetExhausted),
        monitor_violations: count(&|r| matches!(r.outcome, Outcome::MonitorViolation { .. })),
        legitimacy_failures: count(&|r| !r.failed_clauses.is_empty()),
        max_clusterheads: results.iter().map(|r| r.clusterheads).max().unwrap_or(0),
        total_steps: results.iter().map(|r| r.steps as u64).sum(),
        passed: results.iter().all(TrialResult::passed),
        results: &results,
    };
    emit(&summary, cfg.summary.as_ref())?;
    if summary.budget_exceeded > 0 {
        eprintln!("budget exceeded in {} of {} trials", summary.budget_exceeded, summary.trials);
    }
    if summary.monitor_violations > 0 {
        eprintln!("measure monitor violated in {} trials", summary.monitor_violations);
    }
    if summary.legitimacy_failures > 0 {
        eprintln!("terminal checks failed in {} trials", summary.legitimacy_failures);
    }
    Ok(summary.passed)
}

fn emit<T: Serialize>(value: &T, path: Option<&PathBuf>) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => Ok(std::io::stdout().write_all(text.as_bytes())?),
    }
}

fn read_config(path: &PathBuf) -> Result<Configuration<CkState>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let states: Vec<CkState> = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    Ok(Configuration::new(states))
}

#[derive(Serialize)]
struct CheckOutput {
    schema: &'static str,
    passed: bool,
    enabled: Vec<NodeId>,
    clusterheads: usize,
    clusterhead_bound: usize,
    report: Report,
}

fn cmd_check(config: PathBuf, graph: GraphArgs, k: i64) -> Result<bool> {
    let g = read_config(&config)?;
    let net = graph.network()?;
    let inst = ClusterInstance::from_config(net, &g, k)?;
    inst.check_config(&g)?;
    let report = check_terminal(&inst, &g);
    let enabled = enabled_nodes(inst.alg(), inst.net(), &g);
    if !enabled.is_empty() {
        let list: Vec<String> = enabled.iter().map(|p| p.to_string()).collect();
        eprintln!("not terminal: enabled nodes [{}]", list.join(", "));
    }
    let out = CheckOutput {
        schema: CHECK_SCHEMA,
        passed: report.passed(),
        enabled,
        clusterheads: g.states().iter().filter(|s| s.head_c == s.id).count(),
        clusterhead_bound: inst.clusterhead_bound(),
        report,
    };
    for name in out.report.failed() {
        eprintln!("failed: {name}");
    }
    emit(&out, None)?;
    Ok(out.passed)
}

#[derive(Serialize)]
struct ExploreOutput<'a> {
    schema: &'static str,
    graph: &'a str,
    n: usize,
    root: usize,
    k: i64,
    options: ExploreOptions,
    verdict: &'a ckstab::explorer::Verdict,
    sinks: &'a [Configuration<CkState>],
}

#[allow(clippy::too_many_arguments)]
fn cmd_explore(
    graph: GraphArgs,
    root: usize,
    k: i64,
    budget: u64,
    sampled: Option<u64>,
    seed: u64,
    max_n: usize,
    lasso_out: Option<PathBuf>,
) -> Result<bool> {
    if graph.n > max_n {
        bail!("n = {} exceeds the exploration bound of {max_n}", graph.n);
    }
    let net = graph.network()?;
    let inst = instance_on(net, root, k, IdAssignment::Identity, 0)?;
    let options = ExploreOptions {
        budget,
        init: match sampled {
            Some(count) => InitDomain::Sampled { count, seed },
            None => InitDomain::Full,
        },
        max_n,
    };
    let out = explore(&inst, &options)?;
    let v = &out.verdict;
    if let (Some(lasso), Some(path)) = (&v.lasso, &lasso_out) {
        fs::write(path, serde_json::to_string_pretty(lasso)?).with_context(|| format!("writing {}", path.display()))?;
    }
    if !v.complete {
        eprintln!("state budget exceeded: {} of {} configurations explored", v.stats.explored, v.stats.domain_size);
    }
    emit(
        &ExploreOutput {
            schema: EXPLORE_SCHEMA,
            graph: &graph.graph,
            n: inst.n(),
            root,
            k,
            options,
            verdict: v,
            sinks: &out.sinks,
        },
        None,
    )?;
    Ok(v.certified)
}

fn cmd_dot(graph: GraphArgs, root: usize, config: Option<PathBuf>, k: i64) -> Result<bool> {
    let net = graph.network()?;
    let text = match config {
        Some(path) => {
            let g = read_config(&path)?;
            let inst = ClusterInstance::from_config(net, &g, k)?;
            inst.check_config(&g)?;
            cluster_dot(&inst, &g)
        }
        None => {
            if root >= net.n() {
                bail!("root {root} out of range for {} nodes", net.n());
            }
            let tree = build_spanning_tree(&net, NodeId(root))?;
            to_dot(&net, Some(&tree))
        }
    };
    print!("{text}");
    Ok(true)
}

fn dispatch(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Generate { kind, n, seed } => {
            print!("{}", ckstab::topology::generate(kind, n, seed)?.to_edge_list());
            Ok(true)
        }
        Command::Run(args) => cmd_run(args),
        Command::Check { config, graph, k } => cmd_check(config, graph, k),
        Command::Explore { graph, root, k, budget, sampled, seed, max_n, lasso_out } => {
            cmd_explore(graph, root, k, budget, sampled, seed, max_n, lasso_out)
        }
        Command::Dot { graph, root, config, k } => cmd_dot(graph, root, config, k),
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
