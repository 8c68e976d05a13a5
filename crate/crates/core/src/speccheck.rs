//! Checkers for terminal configurations of C(k): the kdom-graph and k-hop
//! domination, the k-clustering predicates, the clusterhead counting bound and
//! the regular-head counting argument behind it.
//!
//! Path lengths count edges, so the empty path has length 0.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use serde::Serialize;

use crate::engine::{enabled_nodes, Configuration};
use crate::kcluster::{CkState, ClusterInstance};
use crate::topology::NodeId;

pub const TERMINAL: &str = "terminal";
pub const ALPHA_RANGE: &str = "alpha_range";
pub const KDOM_ACYCLIC: &str = "kdom_acyclic";
pub const OK_DOM_REACH: &str = "ok_dom_reach";
pub const OK_DOM_LENGTH: &str = "ok_dom_length";
pub const CLUSTER_ACYCLIC: &str = "cluster_paths_acyclic";
pub const KCLUSTER_STRONG: &str = "kcluster_strong";
pub const PARTITION_OK: &str = "partition_ok";
pub const PARTITION_SIZES: &str = "partition_sizes";
pub const COUNT_OK: &str = "count_ok";
pub const KDOM_IFF_HEAD: &str = "kdominator_iff_clusterhead";
pub const CLUSTER_IN_KDOM: &str = "cluster_edges_in_kdom";
pub const SIMPLE_COUNTING: &str = "simple_counting";
pub const SPLIT_COUNTING: &str = "split_counting_cases";
pub const RCOUNT_WITNESS: &str = "rcount_witness";

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Witness {
    pub message: String,
    pub nodes: Vec<NodeId>,
}

impl Witness {
    fn new(message: impl Into<String>, nodes: Vec<NodeId>) -> Self {
        Witness { message: message.into(), nodes }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ClauseResult {
    pub pass: bool,
    pub witnesses: Vec<Witness>,
}

/// Clause name → outcome. Keys are ordered, so the JSON form is stable.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct Report {
    pub clauses: BTreeMap<String, ClauseResult>,
}

impl Report {
    pub fn record(&mut self, clause: &str, witnesses: Vec<Witness>) {
        let entry =
            self.clauses.entry(clause.to_string()).or_insert(ClauseResult { pass: true, witnesses: Vec::new() });
        entry.pass &= witnesses.is_empty();
        entry.witnesses.extend(witnesses);
    }

    pub fn passed(&self) -> bool {
        self.clauses.values().all(|c| c.pass)
    }

    pub fn failed(&self) -> Vec<&str> {
        self.clauses.iter().filter(|(_, c)| !c.pass).map(|(k, _)| k.as_str()).collect()
    }

    pub fn clause(&self, name: &str) -> Option<&ClauseResult> {
        self.clauses.get(name)
    }

    pub fn merge(&mut self, other: Report) {
        for (name, res) in other.clauses {
            self.record(&name, res.witnesses);
        }
    }
}

/// Directed graph over tree edges whose paths witness k-hop domination.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KdomGraph {
    n: usize,
    edges: BTreeSet<(NodeId, NodeId)>,
}

impl KdomGraph {
    pub fn edges(&self) -> &BTreeSet<(NodeId, NodeId)> {
        &self.edges
    }

    pub fn has_edge(&self, from: NodeId, to: NodeId) -> bool {
        self.edges.contains(&(from, to))
    }

    fn preds(&self) -> Vec<Vec<NodeId>> {
        let mut preds = vec![Vec::new(); self.n];
        for &(u, v) in &self.edges {
            preds[v.0].push(u);
        }
        preds
    }

    /// Topological order, or the nodes left on cycles.
    fn topo_order(&self) -> Result<Vec<NodeId>, Vec<NodeId>> {
        let mut indeg = vec![0usize; self.n];
        let mut succ = vec![Vec::new(); self.n];
        for &(u, v) in &self.edges {
            indeg[v.0] += 1;
            succ[u.0].push(v);
        }
        let mut stack: Vec<NodeId> = (0..self.n).filter(|&i| indeg[i] == 0).map(NodeId).collect();
        let mut order = Vec::with_capacity(self.n);
        while let Some(u) = stack.pop() {
            order.push(u);
            for &v in &succ[u.0] {
                indeg[v.0] -= 1;
                if indeg[v.0] == 0 {
                    stack.push(v);
                }
            }
        }
        if order.len() == self.n {
            Ok(order)
        } else {
            Err((0..self.n).filter(|&i| indeg[i] > 0).map(NodeId).collect())
        }
    }
}

/// Edges of the kdom-graph: `parent(s) → s` for every short non-root `s`, and
/// `c → t` for every tall non-dominator `t` and tree child `c` of `t` with
/// `alpha(c) = alpha(t) − 1`.
pub fn kdom_edges(inst: &ClusterInstance, g: &Configuration<CkState>) -> KdomGraph {
    let (net, tree, alg) = (inst.net(), inst.tree(), inst.alg());
    let mut edges = BTreeSet::new();
    for p in net.all_nodes() {
        let s = &g[p];
        if alg.is_short(s) {
            if let Some(parent) = tree.parent(net, p) {
                edges.insert((parent, p));
            }
        } else if !alg.k_dominator(s) {
            for (_, c) in tree.children(net, p) {
                if g[c].alpha == s.alpha - 1 {
                    edges.insert((c, p));
                }
            }
        }
    }
    KdomGraph { n: net.n(), edges }
}

/// k-hop domination through the kdom-graph: every node is reached by a path
/// from some k-dominator, and every path ending at a node has length at most
/// `k`.
pub fn check_ok_dom(inst: &ClusterInstance, g: &Configuration<CkState>) -> Report {
    let mut report = Report::default();
    let graph = kdom_edges(inst, g);
    let order = match graph.topo_order() {
        Ok(order) => order,
        Err(cyclic) => {
            report.record(KDOM_ACYCLIC, vec![Witness::new("kdom-graph has a cycle", cyclic)]);
            return report;
        }
    };
    report.record(KDOM_ACYCLIC, vec![]);
    let preds = graph.preds();
    let n = inst.n();
    let k = inst.k() as usize;
    let mut longest = vec![0usize; n];
    let mut via: Vec<Option<NodeId>> = vec![None; n];
    let mut dominated = vec![false; n];
    for &v in &order {
        dominated[v.0] = inst.alg().k_dominator(&g[v]);
        for &u in &preds[v.0] {
            dominated[v.0] |= dominated[u.0];
            if longest[u.0] + 1 > longest[v.0] {
                longest[v.0] = longest[u.0] + 1;
                via[v.0] = Some(u);
            }
        }
    }
    let mut missing = Vec::new();
    let mut too_long = Vec::new();
    for p in inst.net().all_nodes() {
        if !dominated[p.0] {
            missing.push(Witness::new(format!("no k-dominator reaches node {p}"), vec![p]));
        }
        if longest[p.0] > k {
            let mut path = vec![p];
            let mut cur = p;
            while let Some(u) = via[cur.0] {
                path.push(u);
                cur = u;
            }
            path.reverse();
            too_long
                .push(Witness::new(format!("kdom-path of length {} > k = {k} ends at node {p}", longest[p.0]), path));
        }
    }
    report.record(OK_DOM_REACH, missing);
    report.record(OK_DOM_LENGTH, too_long);
    report
}

/// Cluster parent of every node: the peer behind a valid `par_c`.
fn cluster_parents(inst: &ClusterInstance, g: &Configuration<CkState>) -> Vec<Option<NodeId>> {
    let net = inst.net();
    net.all_nodes()
        .map(|p| match g[p].par_c {
            Some(c) if net.is_channel(p, c) => Some(net.peer(p, c)),
            _ => None,
        })
        .collect()
}

/// Maximal cluster path starting at `p` (p first), or the cycle it runs into.
fn cluster_chain(parents: &[Option<NodeId>], p: NodeId) -> Result<Vec<NodeId>, Vec<NodeId>> {
    let mut chain = vec![p];
    let mut seen = BTreeSet::from([p]);
    let mut cur = p;
    while let Some(q) = parents[cur.0] {
        if !seen.insert(q) {
            let pos = chain.iter().position(|&x| x == q).expect("seen");
            return Err(chain[pos..].to_vec());
        }
        chain.push(q);
        cur = q;
    }
    Ok(chain)
}

/// The clustering predicates on a terminal configuration: strong
/// k-clustering (agreed cluster paths of length at most k to the declared
/// head), partition of the nodes, the clusterhead count bound and the
/// equivalence between k-dominators and clusterheads.
pub fn check_legitimate(inst: &ClusterInstance, g: &Configuration<CkState>) -> Report {
    let mut report = Report::default();
    let net = inst.net();
    let n = inst.n();
    let k = inst.k() as usize;
    let ids = inst.ids();
    let by_id: HashMap<u64, NodeId> = net.all_nodes().map(|p| (ids[p.0], p)).collect();
    let is_head = |p: NodeId| g[p].head_c == ids[p.0];
    let heads: Vec<NodeId> = net.all_nodes().filter(|&p| is_head(p)).collect();
    let parents = cluster_parents(inst, g);

    let mut cycles = Vec::new();
    let mut strong = Vec::new();
    for p in net.all_nodes() {
        let declared = g[p].head_c;
        let chain = match cluster_chain(&parents, p) {
            Ok(chain) => chain,
            Err(cycle) => {
                cycles.push(Witness::new(format!("cluster path from node {p} loops"), cycle));
                continue;
            }
        };
        let end = *chain.last().expect("chain holds p");
        let disagree: Vec<NodeId> = chain.iter().copied().filter(|&q| g[q].head_c != declared).collect();
        if !disagree.is_empty() {
            strong.push(Witness::new(
                format!("cluster path from node {p} disagrees on the head (declared id {declared})"),
                chain.clone(),
            ));
        }
        match by_id.get(&declared) {
            Some(&h) if is_head(h) => {
                if end != h {
                    strong.push(Witness::new(
                        format!("cluster path from node {p} ends at {end}, not at its head {h}"),
                        chain.clone(),
                    ));
                } else if chain.len() - 1 > k {
                    strong.push(Witness::new(
                        format!("cluster path from node {p} has length {} > k = {k}", chain.len() - 1),
                        chain.clone(),
                    ));
                }
            }
            // a declared head that is not a clusterhead is a partition failure
            _ => {}
        }
    }
    report.record(CLUSTER_ACYCLIC, cycles);
    report.record(KCLUSTER_STRONG, strong);

    let mut partition = Vec::new();
    let mut sizes: BTreeMap<NodeId, usize> = heads.iter().map(|&h| (h, 0)).collect();
    for p in net.all_nodes() {
        let owners: Vec<NodeId> = heads.iter().copied().filter(|&h| ids[h.0] == g[p].head_c).collect();
        match owners.as_slice() {
            [h] => *sizes.get_mut(h).expect("head") += 1,
            [] => partition
                .push(Witness::new(format!("node {p} declares id {} which is no clusterhead", g[p].head_c), vec![p])),
            many => partition.push(Witness::new(format!("node {p} belongs to several clusters"), many.to_vec())),
        }
    }
    report.record(PARTITION_OK, partition);
    let total: usize = sizes.values().sum();
    report.record(
        PARTITION_SIZES,
        if total == n {
            vec![]
        } else {
            vec![Witness::new(format!("cluster sizes sum to {total}, expected {n}"), heads.clone())]
        },
    );

    let ch = heads.len();
    report.record(
        COUNT_OK,
        if ch == 0 || n > (k + 1) * (ch - 1) {
            vec![]
        } else {
            vec![Witness::new(
                format!("{ch} clusterheads exceed the bound {}", inst.clusterhead_bound()),
                heads.clone(),
            )]
        },
    );
    if ch == 0 {
        report.record(COUNT_OK, vec![Witness::new("no clusterhead", vec![])]);
    }

    let mismatched: Vec<NodeId> = net.all_nodes().filter(|&p| inst.alg().k_dominator(&g[p]) != is_head(p)).collect();
    report.record(
        KDOM_IFF_HEAD,
        if mismatched.is_empty() {
            vec![]
        } else {
            vec![Witness::new("k-dominator and clusterhead sets differ", mismatched)]
        },
    );

    let kdom = kdom_edges(inst, g);
    let outside: Vec<Witness> = net
        .all_nodes()
        .filter_map(|p| {
            let q = parents[p.0]?;
            (!kdom.has_edge(q, p))
                .then(|| Witness::new(format!("cluster edge {p}→{q} has no kdom edge {q}→{p}"), vec![p, q]))
        })
        .collect();
    report.record(CLUSTER_IN_KDOM, outside);
    report
}

/// Counts behind the clusterhead bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Counts {
    pub n: usize,
    pub dominators: usize,
    pub reg_heads: usize,
    pub reg_nodes: usize,
    pub root_tall: bool,
}

/// Regular heads (`alpha = k`), regular nodes (a tall node on the tree path to
/// the root, the node itself included) and k-dominators.
pub fn counts(inst: &ClusterInstance, g: &Configuration<CkState>) -> Counts {
    let (net, tree, alg) = (inst.net(), inst.tree(), inst.alg());
    let k = inst.k();
    let regular = regular_nodes(inst, g);
    Counts {
        n: net.n(),
        dominators: net.all_nodes().filter(|&p| alg.k_dominator(&g[p])).count(),
        reg_heads: net.all_nodes().filter(|&p| g[p].alpha == k).count(),
        reg_nodes: regular.iter().filter(|&&r| r).count(),
        root_tall: alg.is_tall(&g[tree.root]),
    }
}

fn regular_nodes(inst: &ClusterInstance, g: &Configuration<CkState>) -> Vec<bool> {
    let (net, tree, alg) = (inst.net(), inst.tree(), inst.alg());
    let mut order: Vec<NodeId> = net.all_nodes().collect();
    order.sort_by_key(|&p| inst.depth(p));
    let mut regular = vec![false; net.n()];
    for p in order {
        let above = tree.parent(net, p).is_some_and(|q| regular[q.0]);
        regular[p.0] = above || alg.is_tall(&g[p]);
    }
    regular
}

/// The counting argument: `rn ≥ (k+1)·rh`, the split by root height, and for
/// every regular head and every `i ≤ k` a regular node at `alpha = i` that
/// declares it.
pub fn check_counting(inst: &ClusterInstance, g: &Configuration<CkState>) -> Report {
    let mut report = Report::default();
    let c = counts(inst, g);
    let k = inst.k();
    let ku = k as usize;
    report.record(
        SIMPLE_COUNTING,
        if c.reg_nodes >= (ku + 1) * c.reg_heads {
            vec![]
        } else {
            vec![Witness::new(format!("rn = {} < (k+1)·rh = {}", c.reg_nodes, (ku + 1) * c.reg_heads), vec![])]
        },
    );
    let split_ok = if c.root_tall {
        c.dominators == c.reg_heads && c.n == c.reg_nodes
    } else {
        c.dominators == 1 + c.reg_heads && c.n > c.reg_nodes
    };
    report.record(
        SPLIT_COUNTING,
        if split_ok {
            vec![]
        } else {
            vec![Witness::new(
                format!(
                    "root {}: |D| = {}, rh = {}, n = {}, rn = {}",
                    if c.root_tall { "tall" } else { "short" },
                    c.dominators,
                    c.reg_heads,
                    c.n,
                    c.reg_nodes
                ),
                vec![inst.tree().root],
            )]
        },
    );

    let regular = regular_nodes(inst, g);
    let ids = inst.ids();
    let mut missing = Vec::new();
    for h in inst.net().all_nodes().filter(|&h| g[h].alpha == k) {
        for i in 0..=k {
            let found = inst.net().all_nodes().any(|p| regular[p.0] && g[p].alpha == i && g[p].head_c == ids[h.0]);
            if !found {
                missing
                    .push(Witness::new(format!("no regular node with alpha {i} designates regular head {h}"), vec![h]));
            }
        }
    }
    report.record(RCOUNT_WITNESS, missing);
    report
}

/// Every check applicable to a configuration claimed terminal: the terminal
/// test itself, alpha range, domination, clustering and counting.
pub fn check_terminal(inst: &ClusterInstance, g: &Configuration<CkState>) -> Report {
    let mut report = Report::default();
    let enabled = enabled_nodes(inst.alg(), inst.net(), g);
    report.record(
        TERMINAL,
        if enabled.is_empty() { vec![] } else { vec![Witness::new("not terminal: enabled nodes remain", enabled)] },
    );
    let two_k = 2 * inst.k();
    let out_of_range: Vec<NodeId> = inst.net().all_nodes().filter(|&p| !(0..=two_k).contains(&g[p].alpha)).collect();
    report.record(
        ALPHA_RANGE,
        if out_of_range.is_empty() {
            vec![]
        } else {
            vec![Witness::new(format!("alpha outside [0, {two_k}]"), out_of_range)]
        },
    );
    report.merge(check_ok_dom(inst, g));
    report.merge(check_legitimate(inst, g));
    report.merge(check_counting(inst, g));
    report
}

const PALETTE: [&str; 10] =
    ["#8dd3c7", "#ffffb3", "#bebada", "#fb8072", "#80b1d3", "#fdb462", "#b3de69", "#fccde5", "#d9d9d9", "#bc80bd"];

/// Graphviz rendering of a configuration: nodes filled by declared head,
/// clusterheads drawn bold, `par_c` pointers as arrows, remaining tree edges
/// dashed.
pub fn cluster_dot(inst: &ClusterInstance, g: &Configuration<CkState>) -> String {
    let net = inst.net();
    let mut heads: Vec<u64> = g.states().iter().map(|s| s.head_c).collect();
    heads.sort_unstable();
    heads.dedup();
    let colour = |id: u64| PALETTE[heads.binary_search(&id).unwrap_or(0) % PALETTE.len()];
    let mut s = String::from("digraph clustering {\n  node [shape=circle, style=filled];\n");
    for p in net.all_nodes() {
        let st = &g[p];
        let head = st.head_c == st.id;
        let _ = writeln!(
            s,
            "  {p} [label=\"{p}\\nα={}\\n[{}]\", fillcolor=\"{}\"{}];",
            st.alpha,
            st.head_c,
            colour(st.head_c),
            if head { ", penwidth=3" } else { "" }
        );
    }
    let parents = cluster_parents(inst, g);
    for p in net.all_nodes() {
        if let Some(q) = parents[p.0] {
            let _ = writeln!(s, "  {p} -> {q};");
        }
        if let Some(q) = inst.tree().parent(net, p) {
            if parents[p.0] != Some(q) && parents[q.0] != Some(p) {
                let _ = writeln!(s, "  {p} -> {q} [style=dashed, arrowhead=none, color=gray];");
            }
        }
    }
    s.push_str("}\n");
    s
}
