//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails.

mod common;

use std::collections::BTreeMap;
use std::process::ExitCode;
use std::time::Instant;

use ckstab::daemon::{Daemon, DaemonPolicy};
use ckstab::engine::{default_step_budget, execute, is_terminal, Outcome};
use ckstab::explorer::{explore, ExploreOptions};
use ckstab::kcluster::{identity_ids, PotentialMonitor, SamplerOptions};
use ckstab::order::{check_criteria, dm_less, CriteriaVerdict, NatMultiset};
use ckstab::speccheck::{self, check_terminal};
use ckstab::topology::{build_spanning_tree, generate, GraphKind};
use ckstab::{ClusterInstance, NodeId};
use common::{all_multisets, dm_less_by_partition, fixture_instance, random_instance, terminal_oracle};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

const SWEEP_GRAPHS: u64 = 200;
const SWEEP_INITS: u64 = 20;
const SWEEP_SEED: u64 = 0x005e_edc1;
const DAEMONS: [DaemonPolicy; 3] =
    [DaemonPolicy::Synchronous, DaemonPolicy::CentralRandom, DaemonPolicy::DistributedRandom { p_select: 0.5 }];

const LEGITIMACY: [&str; 11] = [
    speccheck::ALPHA_RANGE,
    speccheck::KDOM_ACYCLIC,
    speccheck::OK_DOM_REACH,
    speccheck::OK_DOM_LENGTH,
    speccheck::CLUSTER_ACYCLIC,
    speccheck::KCLUSTER_STRONG,
    speccheck::PARTITION_OK,
    speccheck::PARTITION_SIZES,
    speccheck::COUNT_OK,
    speccheck::KDOM_IFF_HEAD,
    speccheck::CLUSTER_IN_KDOM,
];
const COUNTING: [&str; 3] = [speccheck::SIMPLE_COUNTING, speccheck::SPLIT_COUNTING, speccheck::RCOUNT_WITNESS];

struct Verdict {
    pass: bool,
    detail: String,
}

#[derive(Default)]
struct Sweep {
    graphs: u64,
    executions: u64,
    terminal: u64,
    steps: u64,
    steps_checked: u64,
    class_counts: [usize; 3],
    bound_failures: Vec<String>,
    monitor_failures: Vec<String>,
    clause_failures: BTreeMap<String, u64>,
    first_clause_failure: Option<String>,
    max_heads_over_bound: (usize, usize),
    nodes: (usize, usize),
}

impl Sweep {
    fn merge(mut self, o: Sweep) -> Sweep {
        self.graphs += o.graphs;
        self.executions += o.executions;
        self.terminal += o.terminal;
        self.steps += o.steps;
        self.steps_checked += o.steps_checked;
        for i in 0..3 {
            self.class_counts[i] += o.class_counts[i];
        }
        self.bound_failures.extend(o.bound_failures);
        self.monitor_failures.extend(o.monitor_failures);
        for (k, v) in o.clause_failures {
            *self.clause_failures.entry(k).or_default() += v;
        }
        self.first_clause_failure = self.first_clause_failure.or(o.first_clause_failure);
        let ratio = |(a, b): (usize, usize)| a as f64 / b.max(1) as f64;
        if ratio(o.max_heads_over_bound) > ratio(self.max_heads_over_bound) {
            self.max_heads_over_bound = o.max_heads_over_bound;
        }
        self.nodes = (self.nodes.0.min(o.nodes.0), self.nodes.1.max(o.nodes.1));
        self
    }
}

fn sweep_graph(i: u64) -> Sweep {
    let mut rng = ChaCha8Rng::seed_from_u64(SWEEP_SEED);
    rng.set_stream(i);
    let n = rng.gen_range(2..=50usize);
    let k = 1 + (i % 3) as i64;
    let inst = random_instance(&mut rng, n, k);
    let mut s = Sweep { graphs: 1, nodes: (n, n), ..Sweep::default() };
    for j in 0..SWEEP_INITS {
        let g0 = inst.sample_config(&mut rng, SamplerOptions { inject_bad_channels: j % 2 == 1 });
        for (d, policy) in DAEMONS.iter().enumerate() {
            let mut daemon = Daemon::new(*policy, rng.gen());
            let mut monitor = PotentialMonitor::new(&inst);
            let trace =
                execute(inst.alg(), inst.net(), g0.clone(), &mut daemon, default_step_budget(n), &mut [&mut monitor])
                    .expect("valid instance");
            s.executions += 1;
            s.steps += trace.step_count() as u64;
            s.steps_checked += monitor.steps_checked as u64;
            for c in 0..3 {
                s.class_counts[c] += monitor.class_counts[c];
            }
            let tag = format!("graph {i} (n={n}, k={k}) init {j} daemon {d}");
            match &trace.outcome {
                Outcome::Terminal => s.terminal += 1,
                Outcome::BudgetExhausted => s.bound_failures.push(format!("{tag}: budget exhausted")),
                Outcome::MonitorViolation { message, .. } => s.monitor_failures.push(format!("{tag}: {message}")),
            }
            if trace.outcome != Outcome::Terminal {
                continue;
            }
            let heads = trace.last.states().iter().filter(|st| st.head_c == st.id).count();
            let bound = inst.clusterhead_bound();
            if heads > bound {
                s.bound_failures.push(format!("{tag}: {heads} clusterheads > bound {bound}"));
            }
            let ratio = |(a, b): (usize, usize)| a as f64 / b.max(1) as f64;
            if ratio((heads, bound)) > ratio(s.max_heads_over_bound) {
                s.max_heads_over_bound = (heads, bound);
            }
            let report = check_terminal(&inst, &trace.last);
            for name in report.failed() {
                *s.clause_failures.entry(name.to_string()).or_default() += 1;
                s.first_clause_failure.get_or_insert_with(|| format!("{tag}: {name}"));
            }
        }
    }
    s
}

fn run_sweep() -> Sweep {
    (0..SWEEP_GRAPHS)
        .into_par_iter()
        .map(sweep_graph)
        .collect::<Vec<_>>()
        .into_iter()
        .fold(Sweep { nodes: (usize::MAX, 0), ..Sweep::default() }, Sweep::merge)
}

fn criterion_bound(s: &Sweep) -> Verdict {
    let pass = s.graphs >= 200 && s.executions == s.terminal && s.bound_failures.is_empty();
    Verdict {
        pass,
        detail: format!(
            "{} graphs, n in [{}, {}], {} executions, {} terminal, worst |CH| {} vs bound {}{}",
            s.graphs,
            s.nodes.0,
            s.nodes.1,
            s.executions,
            s.terminal,
            s.max_heads_over_bound.0,
            s.max_heads_over_bound.1,
            s.bound_failures.first().map(|f| format!("; first failure: {f}")).unwrap_or_default()
        ),
    }
}

fn criterion_monitor(s: &Sweep) -> Verdict {
    let pass = s.monitor_failures.is_empty() && s.steps_checked == s.steps && s.steps > 0;
    Verdict {
        pass,
        detail: format!(
            "{} steps checked of {} (alpha {}, parc {}, headc {}), {} violations{}",
            s.steps_checked,
            s.steps,
            s.class_counts[0],
            s.class_counts[1],
            s.class_counts[2],
            s.monitor_failures.len(),
            s.monitor_failures.first().map(|f| format!("; first: {f}")).unwrap_or_default()
        ),
    }
}

fn clause_verdict(s: &Sweep, clauses: &[&str]) -> Verdict {
    let failures: u64 = clauses.iter().map(|c| s.clause_failures.get(*c).copied().unwrap_or(0)).sum();
    let pass = failures == 0 && s.terminal > 0;
    let detail = if pass {
        format!("{} terminal configurations, clauses {}", s.terminal, clauses.join(", "))
    } else {
        format!(
            "{failures} clause failures {:?}; first: {}",
            s.clause_failures,
            s.first_clause_failure.clone().unwrap_or_default()
        )
    };
    Verdict { pass, detail }
}

fn nat(v: &[u64]) -> NatMultiset {
    v.iter().copied().collect()
}

fn criterion_dm_oracle() -> Verdict {
    let all = all_multisets(4, 5);
    let mut checked = 0u64;
    let mut positive = 0u64;
    let mut disagreements = Vec::new();
    for a in &all {
        for b in &all {
            let fast = dm_less(&nat(a), &nat(b));
            checked += 1;
            positive += u64::from(fast);
            if fast != dm_less_by_partition(a, b) && disagreements.len() < 3 {
                disagreements.push(format!("{a:?} vs {b:?}"));
            }
        }
    }
    let exhaustive = checked;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..10_000 {
        let m: Vec<u64> = (0..rng.gen_range(0..=10)).map(|_| rng.gen_range(0..=30)).collect();
        let n: Vec<u64> = if rng.gen_bool(0.5) || m.is_empty() {
            (0..rng.gen_range(0..=10)).map(|_| rng.gen_range(0..=30)).collect()
        } else {
            // replace one element of m by a handful of smaller or larger ones
            let mut n = m.clone();
            let x = n.swap_remove(rng.gen_range(0..n.len()));
            for _ in 0..rng.gen_range(0..4) {
                n.push(rng.gen_range(0..=x + 1));
            }
            n
        };
        let fast = dm_less(&nat(&n), &nat(&m));
        checked += 1;
        positive += u64::from(fast);
        if fast != dm_less_by_partition(&n, &m) && disagreements.len() < 3 {
            disagreements.push(format!("{n:?} vs {m:?}"));
        }
    }
    Verdict {
        pass: disagreements.is_empty(),
        detail: format!(
            "{exhaustive} exhaustive pairs over {} multisets, {} random pairs, {positive} strictly below{}",
            all.len(),
            checked - exhaustive,
            if disagreements.is_empty() { String::new() } else { format!("; disagreements: {disagreements:?}") }
        ),
    }
}

fn criterion_soundness() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (mut passing, mut attempts, mut unsound) = (0u64, 0u64, Vec::new());
    while passing < 10_000 && attempts < 10_000_000 {
        attempts += 1;
        let len = rng.gen_range(1..=20);
        let before: Vec<u64> = (0..len).map(|_| rng.gen_range(0..=20)).collect();
        let after: Vec<u64> = if rng.gen_bool(0.3) {
            (0..len).map(|_| rng.gen_range(0..=20)).collect()
        } else {
            let top = before[rng.gen_range(0..len)];
            before
                .iter()
                .map(|&b| match rng.gen_range(0..4) {
                    0 if b > 0 => rng.gen_range(0..b),
                    1 => rng.gen_range(0..=top),
                    _ => b,
                })
                .collect()
        };
        if check_criteria(&before, &after) != CriteriaVerdict::Ok {
            continue;
        }
        assert!(before != after, "ok verdict without a change");
        passing += 1;
        if !dm_less(&nat(&after), &nat(&before)) && unsound.len() < 3 {
            unsound.push(format!("{before:?} -> {after:?}"));
        }
    }
    Verdict {
        pass: passing == 10_000 && unsound.is_empty(),
        detail: format!(
            "{passing} passing pairs out of {attempts} drawn{}",
            if unsound.is_empty() { String::new() } else { format!("; unsound: {unsound:?}") }
        ),
    }
}

fn criterion_exhaustive() -> Verdict {
    let cases: [(GraphKind, usize, usize); 10] = [
        (GraphKind::Path, 1, 0),
        (GraphKind::Path, 2, 0),
        (GraphKind::Path, 2, 1),
        (GraphKind::Path, 3, 0),
        (GraphKind::Path, 3, 1),
        (GraphKind::Path, 3, 2),
        (GraphKind::Star, 3, 0),
        (GraphKind::Star, 3, 1),
        (GraphKind::Star, 3, 2),
        (GraphKind::Path, 4, 3),
    ];
    let mut parts = Vec::new();
    let mut pass = true;
    for (kind, n, root) in cases {
        let net = generate(kind, n, 0).expect("generator");
        let tree = build_spanning_tree(&net, NodeId(root)).expect("connected");
        let inst = ClusterInstance::new(net, tree, identity_ids(n), 1).expect("instance");
        let t = Instant::now();
        let out = explore(&inst, &ExploreOptions::default()).expect("within bound");
        let v = &out.verdict;
        pass &= v.certified;
        parts.push(format!(
            "{kind}{n}@{root}: {} {} configs {} transitions {} sinks longest {} ({:.1}s)",
            if v.certified { "certified" } else { "NOT certified" },
            v.stats.explored,
            v.stats.transitions,
            v.stats.sinks,
            v.stats.longest_execution,
            t.elapsed().as_secs_f64()
        ));
        if !v.certified {
            parts.push(format!(
                "complete {} acyclic {} legit {} measure {} range {}",
                v.complete, v.acyclic, v.legit_sinks, v.measure_ok, v.range_closed
            ));
        }
    }
    Verdict { pass, detail: parts.join("; ") }
}

fn criterion_fixture() -> Verdict {
    let inst = fixture_instance();
    let c = |p: usize, q: usize| inst.net().channel_to(NodeId(p), NodeId(q));
    let alpha = [0, 1, 2, 0, 1];
    let par_c = [c(0, 1), None, c(2, 1), c(3, 4), None];
    let head_c = [1, 1, 1, 4, 4];
    let mut problems = Vec::new();

    let oracle = terminal_oracle(&inst);
    if oracle.alpha != alpha || oracle.par_c != par_c || oracle.head_c != head_c {
        problems.push("oracle disagrees with the hand-derived fixture".to_string());
    }
    let fixture = inst.config(&alpha, &par_c, &head_c);
    let mut daemon = Daemon::new(DaemonPolicy::Synchronous, 0);
    let mut monitor = PotentialMonitor::new(&inst);
    let trace =
        execute(inst.alg(), inst.net(), inst.zero_config(), &mut daemon, 1000, &mut [&mut monitor]).expect("valid");
    if trace.outcome != Outcome::Terminal {
        problems.push(format!("outcome {:?}", trace.outcome));
    }
    if trace.last != fixture {
        problems.push(format!("reached {:?}", trace.last.states()));
    }
    if !is_terminal(inst.alg(), inst.net(), &fixture) {
        problems.push("fixture is not a fixed point".into());
    }
    let report = check_terminal(&inst, &fixture);
    if !report.passed() {
        problems.push(format!("fixture fails {:?}", report.failed()));
    }
    let heads: Vec<usize> = (0..5).filter(|&p| fixture[NodeId(p)].head_c == p as u64).collect();
    if heads != [1, 4] {
        problems.push(format!("heads {heads:?}"));
    }
    let cluster = |h: u64| -> Vec<usize> { (0..5).filter(|&p| fixture[NodeId(p)].head_c == h).collect() };
    if cluster(1) != [0, 1, 2] || cluster(4) != [3, 4] {
        problems.push("clusters differ from {0,1,2}/{3,4}".into());
    }
    Verdict {
        pass: problems.is_empty(),
        detail: if problems.is_empty() {
            format!("reached in {} synchronous steps, oracle agrees, fixed point", trace.step_count())
        } else {
            problems.join("; ")
        },
    }
}

fn main() -> ExitCode {
    let mut results: Vec<(u32, &str, Verdict, f64)> = Vec::new();
    let mut timed = |id: u32, name: &'static str, f: &dyn Fn() -> Verdict| {
        let t = Instant::now();
        let v = f();
        results.push((id, name, v, t.elapsed().as_secs_f64()));
    };
    let t = Instant::now();
    let sweep = run_sweep();
    let sweep_secs = t.elapsed().as_secs_f64();
    timed(1, "clusterhead bound", &|| criterion_bound(&sweep));
    timed(2, "termination monitor", &|| criterion_monitor(&sweep));
    timed(3, "legitimacy", &|| clause_verdict(&sweep, &LEGITIMACY));
    timed(4, "counting", &|| clause_verdict(&sweep, &COUNTING));
    timed(5, "dm order oracle", &criterion_dm_oracle);
    timed(6, "criteria soundness", &criterion_soundness);
    timed(7, "exhaustive exploration", &criterion_exhaustive);
    timed(8, "regression fixture", &criterion_fixture);

    println!("sweep: {sweep_secs:.1}s");
    let mut all = true;
    for (id, name, v, secs) in &results {
        all &= v.pass;
        println!("criterion {id} {name}: {} ({secs:.1}s) {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
    }
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
