//! Network topology: bidirectional graphs with per-node channel tables, rooted
//! spanning trees, edge-list ingestion, generators and DOT export.
//!
//! Channels are dense per-node indices. Channel `c` of node `p` leads to the
//! `c`-th neighbor of `p` in ascending node order, so the channel order used to
//! break ties in the clustering algorithm is plain index order.

use std::collections::{BTreeSet, VecDeque};
use std::fmt::{self, Write as _};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Local channel index of a node, in `[0, degree)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ChannelId(pub usize);

impl ChannelId {
    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for ChannelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "c{}", self.0)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TopologyError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("self-loop on node {0}")]
    SelfLoop(usize),
    #[error("node {0} does not appear in the edge list (indices must be dense)")]
    IndexGap(usize),
    #[error("network has no nodes")]
    Empty,
    #[error("edge ({0}, {1}) references a node outside 0..{2}")]
    OutOfRange(usize, usize, usize),
    #[error("graph is disconnected: node {unreached} is unreachable from root {root}")]
    Disconnected { root: NodeId, unreached: NodeId },
    #[error("root {0} is not a node of the network")]
    BadRoot(NodeId),
    #[error("generator needs at least one node")]
    ZeroNodes,
}

/// Immutable bidirectional network.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Network {
    peers: Vec<Vec<NodeId>>,
    reply: Vec<Vec<ChannelId>>,
}

impl Network {
    /// Builds the symmetric closure of `edges` over nodes `0..n`. Duplicate and
    /// reversed edges collapse into one bidirectional link.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self, TopologyError> {
        if n == 0 {
            return Err(TopologyError::Empty);
        }
        let mut adj: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
        for &(u, v) in edges {
            if u >= n || v >= n {
                return Err(TopologyError::OutOfRange(u, v, n));
            }
            if u == v {
                return Err(TopologyError::SelfLoop(u));
            }
            adj[u].insert(v);
            adj[v].insert(u);
        }
        let peers: Vec<Vec<NodeId>> = adj.iter().map(|s| s.iter().copied().map(NodeId).collect()).collect();
        let reply = (0..n)
            .map(|p| {
                peers[p]
                    .iter()
                    .map(|q| {
                        let back = peers[q.0].binary_search(&NodeId(p)).expect("adjacency is symmetric");
                        ChannelId(back)
                    })
                    .collect()
            })
            .collect();
        Ok(Network { peers, reply })
    }

    /// Builds a network from raw channel tables without any validation. Meant
    /// for exercising [`validate_assume`] on malformed inputs.
    pub fn from_channel_tables(peers: Vec<Vec<NodeId>>, reply: Vec<Vec<ChannelId>>) -> Self {
        Network { peers, reply }
    }

    pub fn n(&self) -> usize {
        self.peers.len()
    }

    pub fn all_nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        (0..self.n()).map(NodeId)
    }

    pub fn degree(&self, p: NodeId) -> usize {
        self.peers[p.0].len()
    }

    pub fn channels(&self, p: NodeId) -> impl Iterator<Item = ChannelId> + '_ {
        (0..self.degree(p)).map(ChannelId)
    }

    pub fn is_channel(&self, p: NodeId, c: ChannelId) -> bool {
        c.0 < self.degree(p)
    }

    /// Node at the other end of channel `c` of `p`.
    pub fn peer(&self, p: NodeId, c: ChannelId) -> NodeId {
        self.peers[p.0][c.0]
    }

    /// Channel of `peer(p, c)` leading back to `p`.
    pub fn reply(&self, p: NodeId, c: ChannelId) -> ChannelId {
        self.reply[p.0][c.0]
    }

    pub fn neighbors(&self, p: NodeId) -> &[NodeId] {
        &self.peers[p.0]
    }

    pub fn channel_to(&self, p: NodeId, q: NodeId) -> Option<ChannelId> {
        self.peers[p.0].iter().position(|&x| x == q).map(ChannelId)
    }

    /// Undirected edges `(u, v)` with `u < v`, in lexicographic order.
    pub fn edges(&self) -> Vec<(NodeId, NodeId)> {
        let mut out = Vec::new();
        for p in self.all_nodes() {
            for &q in self.neighbors(p) {
                if p < q {
                    out.push((p, q));
                }
            }
        }
        out
    }

    pub fn edge_count(&self) -> usize {
        self.peers.iter().map(Vec::len).sum::<usize>() / 2
    }

    /// Structural problems of the channel tables: self-loops, duplicate
    /// neighbors, missing reverse channels, incoherent reply map.
    pub fn structural_violations(&self) -> Vec<AssumeViolation> {
        let mut out = Vec::new();
        let n = self.n();
        for p in self.all_nodes() {
            if self.reply[p.0].len() != self.peers[p.0].len() {
                out.push(AssumeViolation::ReplyIncoherent { node: p, channel: None });
                continue;
            }
            let mut seen = BTreeSet::new();
            for c in self.channels(p) {
                let q = self.peer(p, c);
                if q.0 >= n {
                    out.push(AssumeViolation::ReplyIncoherent { node: p, channel: Some(c) });
                    continue;
                }
                if q == p {
                    out.push(AssumeViolation::SelfLoop { node: p });
                }
                if !seen.insert(q) {
                    out.push(AssumeViolation::DuplicateChannel { node: p, peer: q });
                }
                let back = self.reply(p, c);
                if !self.neighbors(q).contains(&p) {
                    out.push(AssumeViolation::Asymmetric { from: p, to: q });
                } else if !self.is_channel(q, back)
                    || self.peer(q, back) != p
                    || self.reply.get(q.0).and_then(|r| r.get(back.0)) != Some(&c)
                {
                    out.push(AssumeViolation::ReplyIncoherent { node: p, channel: Some(c) });
                }
            }
        }
        out
    }

    /// Edge-list rendering accepted by [`load_network`].
    pub fn to_edge_list(&self) -> String {
        let mut s = String::new();
        if self.n() == 1 {
            s.push_str("0\n");
        }
        for (u, v) in self.edges() {
            let _ = writeln!(s, "{} {}", u, v);
        }
        s
    }
}

/// Parses an edge-list document: one `u v` pair per line, `#` starts a
/// comment. A line holding a single index declares an isolated node, which is
/// the only way to describe the one-node network.
pub fn load_network(text: &str) -> Result<Network, TopologyError> {
    let mut edges = Vec::new();
    let mut mentioned = BTreeSet::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let parse = |s: &str| {
            s.parse::<usize>().map_err(|_| TopologyError::Parse {
                line: lineno + 1,
                message: format!("expected a natural number, found {s:?}"),
            })
        };
        match fields.as_slice() {
            [u] => {
                mentioned.insert(parse(u)?);
            }
            [u, v] => {
                let (u, v) = (parse(u)?, parse(v)?);
                if u == v {
                    return Err(TopologyError::SelfLoop(u));
                }
                mentioned.insert(u);
                mentioned.insert(v);
                edges.push((u, v));
            }
            _ => {
                return Err(TopologyError::Parse {
                    line: lineno + 1,
                    message: format!("expected \"u v\", found {line:?}"),
                })
            }
        }
    }
    let n = match mentioned.iter().next_back() {
        Some(&max) => max + 1,
        None => return Err(TopologyError::Empty),
    };
    if let Some(gap) = (0..n).find(|i| !mentioned.contains(i)) {
        return Err(TopologyError::IndexGap(gap));
    }
    Network::from_edges(n, &edges)
}

/// Rooted spanning tree, encoded as the parent channel of every node.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpanTree {
    pub root: NodeId,
    pub par: Vec<Option<ChannelId>>,
}

impl SpanTree {
    pub fn parent(&self, net: &Network, p: NodeId) -> Option<NodeId> {
        self.par[p.0].filter(|&c| net.is_channel(p, c)).map(|c| net.peer(p, c))
    }

    /// Tree children of `p` with the channel of `p` leading to each.
    pub fn children<'a>(&'a self, net: &'a Network, p: NodeId) -> impl Iterator<Item = (ChannelId, NodeId)> + 'a {
        net.channels(p).filter_map(move |c| {
            let q = net.peer(p, c);
            (self.par[q.0] == Some(net.reply(p, c))).then_some((c, q))
        })
    }

    /// Depth of every node: 1 at the root, one more per hop below it. `None`
    /// when the parent relation does not reach the root from every node.
    pub fn depths(&self, net: &Network) -> Option<Vec<usize>> {
        let n = net.n();
        let mut depth = vec![0usize; n];
        depth[self.root.0] = 1;
        let mut queue = VecDeque::from([self.root]);
        let mut reached = 1;
        while let Some(p) = queue.pop_front() {
            for (_, q) in self.children(net, p) {
                if depth[q.0] == 0 && q != self.root {
                    depth[q.0] = depth[p.0] + 1;
                    reached += 1;
                    queue.push_back(q);
                }
            }
        }
        (reached == n).then_some(depth)
    }
}

/// Breadth-first spanning tree rooted at `root`. Neighbors are visited in
/// channel order, so the result is deterministic.
pub fn build_spanning_tree(net: &Network, root: NodeId) -> Result<SpanTree, TopologyError> {
    if root.0 >= net.n() {
        return Err(TopologyError::BadRoot(root));
    }
    let mut par = vec![None; net.n()];
    let mut seen = vec![false; net.n()];
    seen[root.0] = true;
    let mut queue = VecDeque::from([root]);
    while let Some(p) = queue.pop_front() {
        for c in net.channels(p) {
            let q = net.peer(p, c);
            if !seen[q.0] {
                seen[q.0] = true;
                par[q.0] = Some(net.reply(p, c));
                queue.push_back(q);
            }
        }
    }
    if let Some(unreached) = seen.iter().position(|s| !s) {
        return Err(TopologyError::Disconnected { root, unreached: NodeId(unreached) });
    }
    Ok(SpanTree { root, par })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "clause", rename_all = "snake_case")]
pub enum AssumeViolation {
    SelfLoop { node: NodeId },
    DuplicateChannel { node: NodeId, peer: NodeId },
    Asymmetric { from: NodeId, to: NodeId },
    ReplyIncoherent { node: NodeId, channel: Option<ChannelId> },
    WrongSize { expected: usize, found: usize },
    DuplicateId { id: u64, first: NodeId, second: NodeId },
    RootCount { roots: Vec<NodeId> },
    RootMismatch { declared: NodeId },
    BadParentChannel { node: NodeId, channel: ChannelId },
    ParentCycle { nodes: Vec<NodeId> },
}

impl AssumeViolation {
    pub fn clause(&self) -> &'static str {
        match self {
            AssumeViolation::SelfLoop { .. }
            | AssumeViolation::DuplicateChannel { .. }
            | AssumeViolation::Asymmetric { .. }
            | AssumeViolation::ReplyIncoherent { .. } => "sym_net",
            AssumeViolation::DuplicateId { .. } => "unique_id",
            AssumeViolation::WrongSize { .. } => "arity",
            AssumeViolation::RootCount { .. }
            | AssumeViolation::RootMismatch { .. }
            | AssumeViolation::BadParentChannel { .. }
            | AssumeViolation::ParentCycle { .. } => "span_tree",
        }
    }
}

/// Checks the standing assumptions of the clustering algorithm: symmetric
/// network, unique identifiers and a rooted spanning tree. Every violated
/// clause is listed; an empty report means the assumptions hold.
pub fn validate_assume(net: &Network, tree: &SpanTree, ids: &[u64]) -> Vec<AssumeViolation> {
    let mut out = net.structural_violations();
    let n = net.n();
    if ids.len() != n || tree.par.len() != n {
        out.push(AssumeViolation::WrongSize {
            expected: n,
            found: if ids.len() != n { ids.len() } else { tree.par.len() },
        });
        return out;
    }

    let mut first_with: std::collections::BTreeMap<u64, NodeId> = Default::default();
    for p in net.all_nodes() {
        if let Some(&first) = first_with.get(&ids[p.0]) {
            out.push(AssumeViolation::DuplicateId { id: ids[p.0], first, second: p });
        } else {
            first_with.insert(ids[p.0], p);
        }
    }

    let roots: Vec<NodeId> = net.all_nodes().filter(|p| tree.par[p.0].is_none()).collect();
    if roots.len() != 1 {
        out.push(AssumeViolation::RootCount { roots: roots.clone() });
    } else if roots[0] != tree.root {
        out.push(AssumeViolation::RootMismatch { declared: tree.root });
    }
    let mut bad_channel = false;
    for p in net.all_nodes() {
        if let Some(c) = tree.par[p.0] {
            if !net.is_channel(p, c) {
                out.push(AssumeViolation::BadParentChannel { node: p, channel: c });
                bad_channel = true;
            }
        }
    }
    if !bad_channel {
        if let Some(cycle) = parent_cycle(net, tree) {
            out.push(AssumeViolation::ParentCycle { nodes: cycle });
        }
    }
    out
}

/// First cycle of the parent relation, if any.
fn parent_cycle(net: &Network, tree: &SpanTree) -> Option<Vec<NodeId>> {
    // 0 = unvisited, 1 = on current walk, 2 = known to reach a root
    let mut mark = vec![0u8; net.n()];
    for start in net.all_nodes() {
        let mut walk = Vec::new();
        let mut p = start;
        loop {
            match mark[p.0] {
                2 => break,
                1 => {
                    let pos = walk.iter().position(|&x| x == p).expect("on walk");
                    return Some(walk[pos..].to_vec());
                }
                _ => {}
            }
            mark[p.0] = 1;
            walk.push(p);
            match tree.parent(net, p) {
                Some(q) => p = q,
                None => break,
            }
        }
        for q in walk {
            mark[q.0] = 2;
        }
    }
    None
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GraphKind {
    Path,
    Star,
    RingPlusChord,
    RandomTree,
    RandomConnected,
}

impl std::str::FromStr for GraphKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "path" => GraphKind::Path,
            "star" => GraphKind::Star,
            "ring-plus-chord" | "ring" => GraphKind::RingPlusChord,
            "random-tree" | "tree" => GraphKind::RandomTree,
            "random-connected" | "random" => GraphKind::RandomConnected,
            other => return Err(format!("unknown graph kind {other:?}")),
        })
    }
}

impl fmt::Display for GraphKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GraphKind::Path => "path",
            GraphKind::Star => "star",
            GraphKind::RingPlusChord => "ring-plus-chord",
            GraphKind::RandomTree => "random-tree",
            GraphKind::RandomConnected => "random-connected",
        })
    }
}

/// Deterministic graph generator. The seed is ignored by the non-random kinds.
pub fn generate(kind: GraphKind, n: usize, seed: u64) -> Result<Network, TopologyError> {
    if n == 0 {
        return Err(TopologyError::ZeroNodes);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let edges: Vec<(usize, usize)> = match kind {
        GraphKind::Path => (1..n).map(|i| (i - 1, i)).collect(),
        GraphKind::Star => (1..n).map(|i| (0, i)).collect(),
        GraphKind::RingPlusChord => {
            let mut e: Vec<_> = (1..n).map(|i| (i - 1, i)).collect();
            if n >= 3 {
                e.push((n - 1, 0));
            }
            if n >= 4 {
                e.push((0, n / 2));
            }
            e
        }
        GraphKind::RandomTree => random_tree_edges(n, &mut rng),
        GraphKind::RandomConnected => {
            let mut e = random_tree_edges(n, &mut rng);
            let max_edges = n * (n - 1) / 2;
            let mut present: BTreeSet<(usize, usize)> = e.iter().map(|&(u, v)| (u.min(v), u.max(v))).collect();
            let target = (present.len() + rng.gen_range(0..=n / 2)).min(max_edges);
            while present.len() < target {
                let u = rng.gen_range(0..n);
                let v = rng.gen_range(0..n);
                if u != v && present.insert((u.min(v), u.max(v))) {
                    e.push((u, v));
                }
            }
            e
        }
    };
    Network::from_edges(n, &edges)
}

/// Random labelled tree: each node of a shuffled order attaches to a uniformly
/// chosen earlier node.
fn random_tree_edges(n: usize, rng: &mut ChaCha8Rng) -> Vec<(usize, usize)> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    (1..n)
        .map(|i| {
            let j = rng.gen_range(0..i);
            (order[j], order[i])
        })
        .collect()
}

/// Graphviz rendering of the network; tree edges, when a tree is given, are
/// drawn bold and point from child to parent.
pub fn to_dot(net: &Network, tree: Option<&SpanTree>) -> String {
    let mut s = String::from("graph network {\n  node [shape=circle];\n");
    for p in net.all_nodes() {
        let extra = match tree {
            Some(t) if t.root == p => ", peripheries=2",
            _ => "",
        };
        let _ = writeln!(s, "  {} [label=\"{}\"{}];", p, p, extra);
    }
    for (u, v) in net.edges() {
        let in_tree = tree.is_some_and(|t| t.parent(net, u) == Some(v) || t.parent(net, v) == Some(u));
        if in_tree {
            let (child, parent) = if tree.and_then(|t| t.parent(net, u)) == Some(v) { (u, v) } else { (v, u) };
            let _ = writeln!(s, "  {} -- {} [style=bold, dir=forward];", child, parent);
        } else {
            let _ = writeln!(s, "  {} -- {};", u, v);
        }
    }
    s.push_str("}\n");
    s
}
