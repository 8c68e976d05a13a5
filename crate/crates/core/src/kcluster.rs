//! The silent self-stabilizing k-clustering algorithm C(k) over a rooted
//! spanning tree, and the three potential functions that witness its
//! termination.
//!
//! Each node holds a read-only identifier and tree-parent channel, plus three
//! variables: `alpha` (distance information used to elect k-dominators),
//! `par_c` (its parent link inside its cluster) and `head_c` (the identifier
//! of its clusterhead). Three prioritized actions fix `alpha`, then `par_c`,
//! then `head_c`.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{Algorithm, Configuration, LocalView, Monitor, StepClass, StepRecord};
use crate::order::{check_criteria, dm_less, lex_less, ms_equal, CriteriaVerdict, MeasureTriple};
use crate::topology::{validate_assume, ChannelId, Network, NodeId, SpanTree};

/// Largest accepted `|alpha|` in a user-supplied configuration, and the
/// largest accepted `k`.
pub const ALPHA_BOUND: i64 = 1_000_000;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CkState {
    pub id: u64,
    pub par: Option<ChannelId>,
    pub alpha: i64,
    #[serde(rename = "parC")]
    pub par_c: Option<ChannelId>,
    #[serde(rename = "headC")]
    pub head_c: u64,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CkError {
    #[error("k must be in 1..={ALPHA_BOUND}, got {0}")]
    BadK(i64),
    #[error("assumption violated: {0}")]
    Assume(String),
    #[error("node {node}: alpha {alpha} exceeds the accepted bound {ALPHA_BOUND}")]
    AlphaOutOfBounds { node: NodeId, alpha: i64 },
    #[error("configuration does not match the instance at node {0}")]
    Mismatch(NodeId),
    #[error("parC-path cycle through nodes {0:?}")]
    PclCycle(Vec<NodeId>),
}

/// Which of the three actions a node executes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum CkAction {
    Alpha,
    ParC,
    HeadC,
}

impl From<CkAction> for StepClass {
    fn from(a: CkAction) -> Self {
        match a {
            CkAction::Alpha => StepClass::Alpha,
            CkAction::ParC => StepClass::Parc,
            CkAction::HeadC => StepClass::Headc,
        }
    }
}

/// Values of the predicates and macros at one node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Macros {
    pub is_short: bool,
    pub is_tall: bool,
    pub k_dominator: bool,
    pub max_a_short: i64,
    pub min_a_tall: i64,
    pub min_c_min_a_tall: Option<ChannelId>,
    pub alpha: i64,
    pub par_c: Option<ChannelId>,
    pub head_c: u64,
}

/// Algorithm C(k) for a fixed positive `k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KClustering {
    k: i64,
}

impl KClustering {
    pub fn new(k: i64) -> Result<Self, CkError> {
        if !(1..=ALPHA_BOUND).contains(&k) {
            return Err(CkError::BadK(k));
        }
        Ok(KClustering { k })
    }

    pub fn k(&self) -> i64 {
        self.k
    }

    pub fn is_short(&self, s: &CkState) -> bool {
        s.alpha < self.k
    }

    pub fn is_tall(&self, s: &CkState) -> bool {
        s.alpha >= self.k
    }

    pub fn k_dominator(&self, s: &CkState) -> bool {
        s.alpha == self.k || (self.is_short(s) && s.par.is_none())
    }

    pub fn macros(&self, view: &LocalView<'_, CkState>) -> Macros {
        let k = self.k;
        let me = view.state();
        let mut max_a_short = -1;
        let mut min_a_tall = 2 * k + 1;
        let mut any_tall = false;
        for c in view.channels() {
            let q = view.env(c);
            if q.par != Some(view.reply(c)) {
                continue;
            }
            if self.is_short(q) {
                max_a_short = max_a_short.max(q.alpha);
            } else {
                any_tall = true;
                min_a_tall = min_a_tall.min(q.alpha);
            }
        }
        // channels are scanned in ascending order, so `find` yields the
        // <_C-minimal tall child at the minimum; none when every tall child
        // sits above the 2k+1 cap
        let min_c_min_a_tall = if any_tall {
            view.channels().find(|&c| {
                let q = view.env(c);
                q.par == Some(view.reply(c)) && self.is_tall(q) && q.alpha == min_a_tall
            })
        } else {
            None
        };

        let alpha = if max_a_short + min_a_tall <= 2 * k - 2 { min_a_tall + 1 } else { max_a_short + 1 };
        let is_short = self.is_short(me);
        let par_c = if me.alpha == k {
            None
        } else if is_short {
            me.par
        } else {
            min_c_min_a_tall
        };
        let k_dominator = self.k_dominator(me);
        let head_c = if k_dominator {
            me.id
        } else {
            match me.par_c {
                Some(c) if view.is_channel(c) => view.env(c).head_c,
                _ => me.head_c,
            }
        };
        Macros {
            is_short,
            is_tall: !is_short,
            k_dominator,
            max_a_short,
            min_a_tall,
            min_c_min_a_tall,
            alpha,
            par_c,
            head_c,
        }
    }

    /// First action whose guard holds, with the state it produces.
    pub fn step(&self, view: &LocalView<'_, CkState>) -> Option<(CkAction, CkState)> {
        let m = self.macros(view);
        let me = view.state();
        if me.alpha != m.alpha {
            Some((CkAction::Alpha, CkState { alpha: m.alpha, ..me.clone() }))
        } else if me.par_c != m.par_c {
            Some((CkAction::ParC, CkState { par_c: m.par_c, ..me.clone() }))
        } else if me.head_c != m.head_c {
            Some((CkAction::HeadC, CkState { head_c: m.head_c, ..me.clone() }))
        } else {
            None
        }
    }

    pub fn enabled_action(&self, view: &LocalView<'_, CkState>) -> Option<CkAction> {
        self.step(view).map(|(a, _)| a)
    }

    /// Enabled action of every node of a configuration.
    pub fn actions(&self, net: &Network, states: &[CkState]) -> Vec<Option<CkAction>> {
        net.all_nodes().map(|p| self.enabled_action(&LocalView::new(net, states, p))).collect()
    }
}

impl Algorithm for KClustering {
    type State = CkState;
    type ReadOnly = (u64, Option<ChannelId>);

    fn run(&self, view: &LocalView<'_, CkState>) -> Option<CkState> {
        self.step(view).map(|(_, s)| s)
    }

    fn ro_part(&self, s: &CkState) -> (u64, Option<ChannelId>) {
        (s.id, s.par)
    }

    fn assume(&self, net: &Network, ro: &[(u64, Option<ChannelId>)]) -> Result<(), String> {
        let (ids, par): (Vec<u64>, Vec<Option<ChannelId>>) = ro.iter().copied().unzip();
        let tree = tree_from_parents(par).map_err(|roots| format!("expected one root, found {roots:?}"))?;
        let report = validate_assume(net, &tree, &ids);
        if report.is_empty() {
            Ok(())
        } else {
            Err(format!("{report:?}"))
        }
    }

    fn action(&self, view: &LocalView<'_, CkState>) -> Option<StepClass> {
        self.enabled_action(view).map(StepClass::from)
    }
}

/// Rebuilds a tree from parent channels; the root is the unique node without
/// one. On failure returns the nodes without a parent.
pub fn tree_from_parents(par: Vec<Option<ChannelId>>) -> Result<SpanTree, Vec<NodeId>> {
    let roots: Vec<NodeId> = par.iter().enumerate().filter(|(_, c)| c.is_none()).map(|(i, _)| NodeId(i)).collect();
    if roots.len() != 1 {
        return Err(roots);
    }
    Ok(SpanTree { root: roots[0], par })
}

/// Identifier assignments for the nodes.
pub fn identity_ids(n: usize) -> Vec<u64> {
    (0..n as u64).collect()
}

pub fn permuted_ids<R: Rng>(n: usize, rng: &mut R) -> Vec<u64> {
    let mut ids = identity_ids(n);
    ids.shuffle(rng);
    ids
}

/// Knobs of the random initial-configuration sampler.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplerOptions {
    /// Allow `par_c` to hold channel indices that do not exist at the node.
    pub inject_bad_channels: bool,
}

/// Per-node potentials of one configuration.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodePotentials {
    pub alpha: Vec<u64>,
    pub parc: Vec<u64>,
    pub headc: Vec<u64>,
}

impl NodePotentials {
    pub fn measure(&self) -> MeasureTriple {
        MeasureTriple {
            alpha: self.alpha.iter().copied().collect(),
            parc: self.parc.iter().copied().collect(),
            headc: self.headc.iter().copied().collect(),
        }
    }
}

/// A network with identifiers and a rooted spanning tree satisfying the
/// algorithm's assumptions, together with the algorithm parameter.
#[derive(Debug, Clone)]
pub struct ClusterInstance {
    net: Network,
    tree: SpanTree,
    ids: Vec<u64>,
    alg: KClustering,
    depth: Vec<usize>,
}

impl ClusterInstance {
    pub fn new(net: Network, tree: SpanTree, ids: Vec<u64>, k: i64) -> Result<Self, CkError> {
        let alg = KClustering::new(k)?;
        let report = validate_assume(&net, &tree, &ids);
        if !report.is_empty() {
            return Err(CkError::Assume(format!("{report:?}")));
        }
        let depth = tree.depths(&net).expect("validated tree reaches the root");
        Ok(ClusterInstance { net, tree, ids, alg, depth })
    }

    /// Instance whose identifiers and tree are read off a configuration.
    pub fn from_config(net: Network, g: &Configuration<CkState>, k: i64) -> Result<Self, CkError> {
        if g.len() != net.n() {
            return Err(CkError::Assume(format!("configuration has {} states for {} nodes", g.len(), net.n())));
        }
        let ids = g.states().iter().map(|s| s.id).collect();
        let tree = tree_from_parents(g.states().iter().map(|s| s.par).collect())
            .map_err(|roots| CkError::Assume(format!("expected one root, found {roots:?}")))?;
        Self::new(net, tree, ids, k)
    }

    pub fn net(&self) -> &Network {
        &self.net
    }

    pub fn tree(&self) -> &SpanTree {
        &self.tree
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn alg(&self) -> &KClustering {
        &self.alg
    }

    pub fn k(&self) -> i64 {
        self.alg.k
    }

    pub fn n(&self) -> usize {
        self.net.n()
    }

    /// One plus the tree distance to the root.
    pub fn depth(&self, p: NodeId) -> usize {
        self.depth[p.0]
    }

    /// Upper bound on clusterheads: `⌊(n−1)/(k+1)⌋ + 1`.
    pub fn clusterhead_bound(&self) -> usize {
        clusterhead_bound(self.n(), self.k())
    }

    pub fn view<'a>(&'a self, g: &'a Configuration<CkState>, p: NodeId) -> LocalView<'a, CkState> {
        LocalView::new(&self.net, g.states(), p)
    }

    /// Configuration with the given variable parts.
    pub fn config(&self, alpha: &[i64], par_c: &[Option<ChannelId>], head_c: &[u64]) -> Configuration<CkState> {
        Configuration::new(
            self.net
                .all_nodes()
                .map(|p| CkState {
                    id: self.ids[p.0],
                    par: self.tree.par[p.0],
                    alpha: alpha[p.0],
                    par_c: par_c[p.0],
                    head_c: head_c[p.0],
                })
                .collect(),
        )
    }

    /// Every variable zero: `alpha = 0`, `par_c = ⊥`, `head_c = 0`.
    pub fn zero_config(&self) -> Configuration<CkState> {
        let n = self.n();
        self.config(&vec![0; n], &vec![None; n], &vec![0; n])
    }

    /// Random initial configuration. `alpha` is uniform over
    /// `[−(2k+2), 4k+2]` except on about a tenth of the nodes, which get an
    /// extreme value; `par_c` is uniform over the node's channels and ⊥;
    /// `head_c` is uniform over the identifiers plus one identifier that no
    /// node carries.
    pub fn sample_config<R: Rng>(&self, rng: &mut R, opts: SamplerOptions) -> Configuration<CkState> {
        let k = self.k();
        let ghost = self.ids.iter().copied().max().unwrap_or(0) + 1;
        let extremes = [-ALPHA_BOUND, ALPHA_BOUND, -(2 * k + 2), 4 * k + 2];
        let states = self
            .net
            .all_nodes()
            .map(|p| {
                let alpha = if rng.gen_bool(0.1) {
                    *extremes.choose(rng).expect("nonempty")
                } else {
                    rng.gen_range(-(2 * k + 2)..=4 * k + 2)
                };
                let deg = self.net.degree(p);
                let extra = if opts.inject_bad_channels { 2 } else { 0 };
                let pick = rng.gen_range(0..=deg + extra);
                let par_c = (pick < deg + extra).then_some(ChannelId(pick));
                let head_c = match rng.gen_range(0..=self.ids.len()) {
                    i if i == self.ids.len() => ghost,
                    i => self.ids[i],
                };
                CkState { id: self.ids[p.0], par: self.tree.par[p.0], alpha, par_c, head_c }
            })
            .collect();
        Configuration::new(states)
    }

    /// Checks that a configuration belongs to this instance and carries
    /// bounded `alpha` values.
    pub fn check_config(&self, g: &Configuration<CkState>) -> Result<(), CkError> {
        if g.len() != self.n() {
            return Err(CkError::Mismatch(NodeId(g.len().min(self.n()))));
        }
        for p in self.net.all_nodes() {
            let s = &g[p];
            if s.id != self.ids[p.0] || s.par != self.tree.par[p.0] {
                return Err(CkError::Mismatch(p));
            }
            if s.alpha.abs() > ALPHA_BOUND {
                return Err(CkError::AlphaOutOfBounds { node: p, alpha: s.alpha });
            }
        }
        Ok(())
    }

    pub fn macros(&self, g: &Configuration<CkState>, p: NodeId) -> Macros {
        self.alg.macros(&self.view(g, p))
    }

    pub fn run_ck(&self, g: &Configuration<CkState>, p: NodeId) -> Option<CkState> {
        self.alg.run(&self.view(g, p))
    }

    pub fn alpha_pot(&self, g: &Configuration<CkState>, p: NodeId) -> u64 {
        match self.alg.enabled_action(&self.view(g, p)) {
            Some(CkAction::Alpha) => self.depth[p.0] as u64,
            _ => 0,
        }
    }

    pub fn parc_pot(&self, g: &Configuration<CkState>, p: NodeId) -> u64 {
        u64::from(self.alg.enabled_action(&self.view(g, p)) == Some(CkAction::ParC))
    }

    pub fn headc_pot(&self, g: &Configuration<CkState>, p: NodeId) -> Result<u64, CkError> {
        if self.alg.enabled_action(&self.view(g, p)) == Some(CkAction::HeadC) {
            Ok(self.nn() - self.dist_hd(g, p)? as u64)
        } else {
            Ok(0)
        }
    }

    /// `n + 1`, an upper bound on every parC-path length plus one.
    pub fn nn(&self) -> u64 {
        self.n() as u64 + 1
    }

    /// Length of the parC-path from `p`: the chain of `par_c` pointers
    /// followed through nodes that are neither alpha- nor parC-enabled.
    pub fn dist_hd(&self, g: &Configuration<CkState>, p: NodeId) -> Result<usize, CkError> {
        let actions = self.alg.actions(&self.net, g.states());
        let succ = self.pcl_successors(g.states(), &actions);
        let mut seen = vec![false; self.n()];
        let mut walk = vec![p];
        let mut cur = p;
        seen[p.0] = true;
        while let Some(q) = succ[cur.0] {
            if seen[q.0] {
                let pos = walk.iter().position(|&x| x == q).expect("seen nodes are on the walk");
                return Err(CkError::PclCycle(walk[pos..].to_vec()));
            }
            seen[q.0] = true;
            walk.push(q);
            cur = q;
        }
        Ok(walk.len() - 1)
    }

    fn pcl_successors(&self, states: &[CkState], actions: &[Option<CkAction>]) -> Vec<Option<NodeId>> {
        self.net
            .all_nodes()
            .map(|p| match (actions[p.0], states[p.0].par_c) {
                (None | Some(CkAction::HeadC), Some(c)) if self.net.is_channel(p, c) => Some(self.net.peer(p, c)),
                _ => None,
            })
            .collect()
    }

    /// All three potentials at every node, in one pass.
    pub fn potentials_of(&self, states: &[CkState]) -> Result<NodePotentials, CkError> {
        let n = self.n();
        let actions = self.alg.actions(&self.net, states);
        let succ = self.pcl_successors(states, &actions);
        // dist[p] = length of p's parC-path, resolved iteratively
        const UNKNOWN: usize = usize::MAX;
        let mut dist = vec![UNKNOWN; n];
        let mut on_walk = vec![false; n];
        for start in 0..n {
            if dist[start] != UNKNOWN {
                continue;
            }
            let mut walk = vec![start];
            on_walk[start] = true;
            let mut cur = start;
            let base = loop {
                match succ[cur] {
                    None => break 0,
                    Some(q) if dist[q.0] != UNKNOWN => break dist[q.0] + 1,
                    Some(q) if on_walk[q.0] => {
                        let pos = walk.iter().position(|&x| x == q.0).expect("on walk");
                        return Err(CkError::PclCycle(walk[pos..].iter().map(|&i| NodeId(i)).collect()));
                    }
                    Some(q) => {
                        on_walk[q.0] = true;
                        walk.push(q.0);
                        cur = q.0;
                    }
                }
            };
            // the last node of the walk has distance `base`
            for (i, &x) in walk.iter().rev().enumerate() {
                dist[x] = base + i;
                on_walk[x] = false;
            }
        }
        let nn = self.nn();
        let mut pots = NodePotentials { alpha: vec![0; n], parc: vec![0; n], headc: vec![0; n] };
        for p in 0..n {
            match actions[p] {
                Some(CkAction::Alpha) => pots.alpha[p] = self.depth[p] as u64,
                Some(CkAction::ParC) => pots.parc[p] = 1,
                Some(CkAction::HeadC) => pots.headc[p] = nn - dist[p] as u64,
                None => {}
            }
        }
        Ok(pots)
    }

    pub fn potentials(&self, g: &Configuration<CkState>) -> Result<NodePotentials, CkError> {
        self.potentials_of(g.states())
    }

    pub fn measure(&self, g: &Configuration<CkState>) -> Result<MeasureTriple, CkError> {
        Ok(self.potentials(g)?.measure())
    }
}

pub fn clusterhead_bound(n: usize, k: i64) -> usize {
    (n.saturating_sub(1)) / (k as usize + 1) + 1
}

/// Outcome of checking one step against the termination measure.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "violation", rename_all = "kebab-case")]
pub enum MeasureViolation {
    /// The potential component of the step's class did not strictly decrease.
    NoDecrease {
        class: StepClass,
    },
    /// A higher-priority component changed during a lower-priority step.
    HigherChanged {
        class: StepClass,
    },
    /// The per-node local/global criteria failed for the step's component.
    Criteria {
        class: StepClass,
        verdict: CriteriaVerdict,
    },
    /// The triple did not decrease lexicographically.
    NotLexDecreasing,
    /// A moving node wrote an alpha outside `[0, 2k]`.
    AlphaRange {
        node: NodeId,
        alpha: i64,
    },
    Potential(String),
}

/// Checks one step against the per-class measure contract: an alpha step
/// decreases the alpha potential, a parC step keeps the alpha potential and
/// decreases the parC potential, a headC step keeps both and decreases the
/// headC potential.
pub fn check_step_measure(
    inst: &ClusterInstance,
    before: &NodePotentials,
    after: &NodePotentials,
    class: StepClass,
    moved: &[(NodeId, i64)],
) -> Result<(), MeasureViolation> {
    let two_k = 2 * inst.k();
    for &(node, alpha) in moved {
        if !(0..=two_k).contains(&alpha) {
            return Err(MeasureViolation::AlphaRange { node, alpha });
        }
    }
    let (mb, ma) = (before.measure(), after.measure());
    let (pb, pa, kept): (&[u64], &[u64], Vec<bool>) = match class {
        StepClass::Alpha => (&before.alpha, &after.alpha, vec![]),
        StepClass::Parc => (&before.parc, &after.parc, vec![ms_equal(&ma.alpha, &mb.alpha)]),
        StepClass::Headc => {
            (&before.headc, &after.headc, vec![ms_equal(&ma.alpha, &mb.alpha), ms_equal(&ma.parc, &mb.parc)])
        }
        StepClass::Generic => return Err(MeasureViolation::NoDecrease { class }),
    };
    if kept.iter().any(|k| !k) {
        return Err(MeasureViolation::HigherChanged { class });
    }
    let verdict = check_criteria(pb, pa);
    if verdict != CriteriaVerdict::Ok {
        return Err(MeasureViolation::Criteria { class, verdict });
    }
    let (sb, sa) = match class {
        StepClass::Alpha => (&mb.alpha, &ma.alpha),
        StepClass::Parc => (&mb.parc, &ma.parc),
        _ => (&mb.headc, &ma.headc),
    };
    if !dm_less(sa, sb) {
        return Err(MeasureViolation::NoDecrease { class });
    }
    if !lex_less(&ma, &mb) {
        return Err(MeasureViolation::NotLexDecreasing);
    }
    Ok(())
}

/// Engine monitor enforcing [`check_step_measure`] on every step.
pub struct PotentialMonitor<'a> {
    inst: &'a ClusterInstance,
    cached: Option<NodePotentials>,
    pub steps_checked: usize,
    pub class_counts: [usize; 3],
}

impl<'a> PotentialMonitor<'a> {
    pub fn new(inst: &'a ClusterInstance) -> Self {
        PotentialMonitor { inst, cached: None, steps_checked: 0, class_counts: [0; 3] }
    }
}

impl Monitor<CkState> for PotentialMonitor<'_> {
    fn observe(
        &mut self,
        step: usize,
        before: &Configuration<CkState>,
        after: &Configuration<CkState>,
        record: &StepRecord<CkState>,
    ) -> Result<(), String> {
        let pb = match self.cached.take() {
            Some(p) => p,
            None => self.inst.potentials(before).map_err(|e| e.to_string())?,
        };
        let pa = self.inst.potentials(after).map_err(|e| e.to_string())?;
        let moved: Vec<(NodeId, i64)> =
            record.activated.iter().zip(&record.updates).map(|(&p, s)| (p, s.alpha)).collect();
        check_step_measure(self.inst, &pb, &pa, record.class, &moved).map_err(|v| format!("step {step}: {v:?}"))?;
        self.steps_checked += 1;
        match record.class {
            StepClass::Alpha => self.class_counts[0] += 1,
            StepClass::Parc => self.class_counts[1] += 1,
            _ => self.class_counts[2] += 1,
        }
        self.cached = Some(pa);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::daemon::{Daemon, DaemonPolicy};
    use crate::engine::{apply_step, enabled_nodes, execute, is_terminal};
    use crate::topology::{build_spanning_tree, generate, GraphKind};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn path5() -> ClusterInstance {
        let net = generate(GraphKind::Path, 5, 0).unwrap();
        let tree = build_spanning_tree(&net, NodeId(4)).unwrap();
        ClusterInstance::new(net, tree, identity_ids(5), 1).unwrap()
    }

    fn ch(inst: &ClusterInstance, p: usize, q: usize) -> Option<ChannelId> {
        inst.net().channel_to(NodeId(p), NodeId(q))
    }

    /// Independent oracle for the terminal configuration of C(k): alpha is
    /// computed bottom-up from tree children, `par_c` from alpha, and
    /// `head_c` top-down along `par_c`, all by direct recursion over the tree
    /// instead of through local views.
    fn terminal_oracle(inst: &ClusterInstance) -> (Vec<i64>, Vec<Option<NodeId>>, Vec<u64>) {
        let (net, tree, k) = (inst.net(), inst.tree(), inst.k());
        let n = net.n();
        let mut order: Vec<NodeId> = net.all_nodes().collect();
        order.sort_by_key(|&p| std::cmp::Reverse(inst.depth(p)));
        let mut alpha = vec![0i64; n];
        for &p in &order {
            let kids: Vec<NodeId> = tree.children(net, p).map(|(_, q)| q).collect();
            let short = kids.iter().map(|q| alpha[q.0]).filter(|&a| a < k).max().unwrap_or(-1);
            let tall = kids.iter().map(|q| alpha[q.0]).filter(|&a| a >= k).min().unwrap_or(2 * k + 1);
            alpha[p.0] = if short + tall <= 2 * k - 2 { tall + 1 } else { short + 1 };
        }
        let parent: Vec<Option<NodeId>> = net
            .all_nodes()
            .map(|p| {
                let a = alpha[p.0];
                if a == k {
                    None
                } else if a < k {
                    tree.parent(net, p)
                } else {
                    let kids: Vec<NodeId> = tree.children(net, p).map(|(_, q)| q).collect();
                    let m = kids.iter().map(|q| alpha[q.0]).filter(|&x| x >= k).min();
                    kids.into_iter().find(|q| Some(alpha[q.0]) == m)
                }
            })
            .collect();
        let head = net
            .all_nodes()
            .map(|p| {
                let mut cur = p;
                while let Some(q) = parent[cur.0] {
                    cur = q;
                }
                inst.ids()[cur.0]
            })
            .collect();
        (alpha, parent, head)
    }

    #[test]
    fn oracle_matches_hand_derived_fixture() {
        let inst = path5();
        let (alpha, parent, head) = terminal_oracle(&inst);
        assert_eq!(alpha, vec![0, 1, 2, 0, 1]);
        assert_eq!(parent, vec![Some(NodeId(1)), None, Some(NodeId(1)), Some(NodeId(4)), None]);
        assert_eq!(head, vec![1, 1, 1, 4, 4]);
    }

    fn fixture(inst: &ClusterInstance) -> Configuration<CkState> {
        let par_c = [ch(inst, 0, 1), None, ch(inst, 2, 1), ch(inst, 3, 4), None];
        inst.config(&[0, 1, 2, 0, 1], &par_c, &[1, 1, 1, 4, 4])
    }

    #[test]
    fn fixture_is_terminal() {
        let inst = path5();
        let g = fixture(&inst);
        for p in inst.net().all_nodes() {
            assert_eq!(inst.run_ck(&g, p), None, "node {p} enabled");
        }
        assert!(is_terminal(inst.alg(), inst.net(), &g));
        let pots = inst.potentials(&g).unwrap();
        assert!(pots.alpha.iter().chain(&pots.parc).chain(&pots.headc).all(|&x| x == 0));
        assert_eq!(inst.dist_hd(&g, NodeId(0)).unwrap(), 1);
        assert_eq!(inst.dist_hd(&g, NodeId(1)).unwrap(), 0);
        assert_eq!(inst.dist_hd(&g, NodeId(2)).unwrap(), 1);
    }

    #[test]
    fn leaf_macros_use_defaults() {
        let net = generate(GraphKind::Path, 3, 0).unwrap();
        let tree = build_spanning_tree(&net, NodeId(2)).unwrap();
        let inst = ClusterInstance::new(net, tree, identity_ids(3), 2).unwrap();
        let g = inst.config(&[5, 0, 0], &[None; 3], &[0; 3]);
        let m = inst.macros(&g, NodeId(0));
        assert_eq!((m.max_a_short, m.min_a_tall, m.alpha), (-1, 5, 0));
        assert_eq!(m.min_c_min_a_tall, None);
        let next = inst.run_ck(&g, NodeId(0)).unwrap();
        assert_eq!(next, CkState { alpha: 0, ..g[NodeId(0)].clone() });
        assert!(crate::engine::enabled(inst.alg(), inst.net(), &g, NodeId(0)));
    }

    /// Star centred at 0 with leaves 1..=4, rooted at the centre.
    fn star(k: i64) -> ClusterInstance {
        let net = generate(GraphKind::Star, 5, 0).unwrap();
        let tree = build_spanning_tree(&net, NodeId(0)).unwrap();
        ClusterInstance::new(net, tree, identity_ids(5), k).unwrap()
    }

    #[test]
    fn alpha_from_short_and_tall_children() {
        let inst = star(2);
        // short children at alpha 0, tall children at 2 and 3: 0 + 2 <= 2
        let g = inst.config(&[0, 0, 2, 3, 0], &[None; 5], &[0; 5]);
        let m = inst.macros(&g, NodeId(0));
        assert_eq!((m.max_a_short, m.min_a_tall), (0, 2));
        assert_eq!(m.alpha, 3);
    }

    #[test]
    fn channel_order_breaks_ties_between_tall_children() {
        let inst = star(2);
        // two tall children at alpha 2 behind channels 1 and 3 of the centre
        let g = inst.config(&[4, 0, 2, 3, 2], &[None; 5], &[0; 5]);
        let m = inst.macros(&g, NodeId(0));
        assert_eq!(m.min_a_tall, 2);
        assert_eq!(m.min_c_min_a_tall, ch(&inst, 0, 2));
        assert_eq!(m.par_c, ch(&inst, 0, 2));
    }

    #[test]
    fn tall_child_above_clamp_is_not_a_witness() {
        let inst = star(1);
        // only tall child has alpha 9 > 2k+1 = 3: MinATall falls back to 3
        let g = inst.config(&[2, 9, -1, -1, -1], &[None; 5], &[0; 5]);
        let m = inst.macros(&g, NodeId(0));
        assert_eq!(m.min_a_tall, 3);
        assert_eq!(m.min_c_min_a_tall, None);
    }

    #[test]
    fn short_root_is_k_dominator() {
        let inst = star(2);
        let g = inst.config(&[0; 5], &[None; 5], &[0; 5]);
        assert!(inst.macros(&g, NodeId(0)).k_dominator);
        assert!(!inst.macros(&g, NodeId(1)).k_dominator);
    }

    #[test]
    fn node_at_k_drops_parent_link() {
        // path of three rooted at 2, k = 1: node 1 with one short child at 0
        // has Alpha = 1 = k
        let net = generate(GraphKind::Path, 3, 0).unwrap();
        let tree = build_spanning_tree(&net, NodeId(2)).unwrap();
        let inst = ClusterInstance::new(net, tree, identity_ids(3), 1).unwrap();
        let g = inst.config(&[0, 1, 2], &[None, Some(ChannelId(1)), None], &[0, 0, 0]);
        let (action, next) = inst.alg().step(&inst.view(&g, NodeId(1))).unwrap();
        assert_eq!(action, CkAction::ParC);
        assert_eq!(next.par_c, None);
        assert_eq!(next.alpha, 1);
    }

    #[test]
    fn head_c_reads_through_current_par_c() {
        let net = generate(GraphKind::Path, 3, 0).unwrap();
        let tree = build_spanning_tree(&net, NodeId(2)).unwrap();
        let inst = ClusterInstance::new(net, tree, identity_ids(3), 1).unwrap();
        // terminal alphas for this tree: leaf 0, node 1 at k, root 0 (short root)
        let g = inst.config(&[0, 1, 0], &[ch(&inst, 0, 1), None, None], &[7, 1, 2]);
        let m = inst.macros(&g, NodeId(0));
        assert_eq!(m.head_c, 1);
        // out-of-range parC falls back to the node's own headC
        let g = inst.config(&[0, 1, 0], &[Some(ChannelId(5)), None, None], &[7, 1, 2]);
        assert_eq!(inst.macros(&g, NodeId(0)).head_c, 7);
    }

    #[test]
    fn depths_on_fixture() {
        let inst = path5();
        assert_eq!(inst.depth(NodeId(4)), 1);
        assert_eq!(inst.depth(NodeId(3)), 2);
        assert_eq!(inst.depth(NodeId(0)), 5);
        assert_eq!(inst.nn(), 6);
    }

    #[test]
    fn potentials_follow_guards() {
        let inst = path5();
        let mut g = fixture(&inst);
        g.set(NodeId(0), CkState { alpha: 3, ..g[NodeId(0)].clone() });
        assert_eq!(inst.alpha_pot(&g, NodeId(0)), 5);
        assert_eq!(inst.parc_pot(&g, NodeId(0)), 0);

        let mut g = fixture(&inst);
        g.set(NodeId(2), CkState { par_c: None, ..g[NodeId(2)].clone() });
        assert_eq!(inst.parc_pot(&g, NodeId(2)), 1);
        assert_eq!(inst.alpha_pot(&g, NodeId(2)), 0);
        // parC-enabled node is not on any parC-path
        assert_eq!(inst.dist_hd(&g, NodeId(2)).unwrap(), 0);

        let mut g = fixture(&inst);
        g.set(NodeId(0), CkState { head_c: 4, ..g[NodeId(0)].clone() });
        assert_eq!(inst.headc_pot(&g, NodeId(0)).unwrap(), 6 - 1);
        let pots = inst.potentials(&g).unwrap();
        assert_eq!(pots.headc, vec![5, 0, 0, 0, 0]);
    }

    #[test]
    fn synchronous_run_from_zero_reaches_fixture() {
        let inst = path5();
        let mut daemon = Daemon::new(DaemonPolicy::Synchronous, 0);
        let mut monitor = PotentialMonitor::new(&inst);
        let trace =
            execute(inst.alg(), inst.net(), inst.zero_config(), &mut daemon, 1000, &mut [&mut monitor]).unwrap();
        assert!(trace.is_terminal());
        assert_eq!(trace.last, fixture(&inst));
        assert_eq!(monitor.steps_checked, trace.step_count());
    }

    #[test]
    fn synchronous_step_from_all_minus_one() {
        let inst = path5();
        let g = inst.config(&[-1; 5], &[None; 5], &[0; 5]);
        let enabled = enabled_nodes(inst.alg(), inst.net(), &g);
        assert_eq!(enabled.len(), 5);
        let (after, rec) = apply_step(inst.alg(), inst.net(), &g, &enabled).unwrap();
        assert!(after.states().iter().all(|s| s.alpha == 0));
        assert_eq!(rec.class, StepClass::Alpha);
    }

    #[test]
    fn mixed_step_is_classified_alpha() {
        let inst = path5();
        let mut g = fixture(&inst);
        g.set(NodeId(0), CkState { alpha: 3, ..g[NodeId(0)].clone() });
        g.set(NodeId(3), CkState { head_c: 0, ..g[NodeId(3)].clone() });
        let (_, rec) = apply_step(inst.alg(), inst.net(), &g, &[NodeId(0), NodeId(3)]).unwrap();
        assert_eq!(rec.class, StepClass::Alpha);
        let (_, rec) = apply_step(inst.alg(), inst.net(), &g, &[NodeId(3)]).unwrap();
        assert_eq!(rec.class, StepClass::Headc);

        let mut g = fixture(&inst);
        g.set(NodeId(2), CkState { par_c: None, ..g[NodeId(2)].clone() });
        let (_, rec) = apply_step(inst.alg(), inst.net(), &g, &[NodeId(2)]).unwrap();
        assert_eq!(rec.class, StepClass::Parc);
    }

    #[test]
    fn instance_rejects_bad_inputs() {
        let net = generate(GraphKind::Path, 3, 0).unwrap();
        let tree = build_spanning_tree(&net, NodeId(0)).unwrap();
        assert_eq!(KClustering::new(0), Err(CkError::BadK(0)));
        assert!(matches!(ClusterInstance::new(net.clone(), tree.clone(), vec![1, 1, 2], 1), Err(CkError::Assume(_))));
        let inst = ClusterInstance::new(net, tree, identity_ids(3), 1).unwrap();
        let g = inst.config(&[0, 2_000_000, 0], &[None; 3], &[0; 3]);
        assert!(matches!(inst.check_config(&g), Err(CkError::AlphaOutOfBounds { .. })));
    }

    #[test]
    fn sampler_respects_domains() {
        let net = generate(GraphKind::RandomConnected, 20, 3).unwrap();
        let tree = build_spanning_tree(&net, NodeId(0)).unwrap();
        let inst = ClusterInstance::new(net, tree, identity_ids(20), 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut saw_ghost = false;
        let mut saw_bad = false;
        for _ in 0..50 {
            let g = inst.sample_config(&mut rng, SamplerOptions { inject_bad_channels: true });
            inst.check_config(&g).unwrap();
            for p in inst.net().all_nodes() {
                let s = &g[p];
                assert!(s.head_c <= 20);
                saw_ghost |= s.head_c == 20;
                if let Some(c) = s.par_c {
                    assert!(c.0 < inst.net().degree(p) + 2);
                    saw_bad |= !inst.net().is_channel(p, c);
                }
            }
        }
        assert!(saw_ghost && saw_bad);
    }

    #[test]
    fn executions_with_garbage_and_bad_channels_terminate() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for seed in 0..20u64 {
            let n = 2 + (seed as usize * 7) % 30;
            let net = generate(GraphKind::RandomConnected, n, seed).unwrap();
            let tree = build_spanning_tree(&net, NodeId(seed as usize % n)).unwrap();
            let ids = permuted_ids(n, &mut rng);
            let inst = ClusterInstance::new(net, tree, ids, 1 + (seed as i64 % 3)).unwrap();
            let g0 = inst.sample_config(&mut rng, SamplerOptions { inject_bad_channels: true });
            let mut daemon = Daemon::new(DaemonPolicy::AdversarialLazy, seed);
            let mut monitor = PotentialMonitor::new(&inst);
            let trace = execute(inst.alg(), inst.net(), g0, &mut daemon, 100_000, &mut [&mut monitor]).unwrap();
            assert!(trace.is_terminal(), "{:?}", trace.outcome);
            let (alpha, _, head) = terminal_oracle(&inst);
            let got: Vec<i64> = trace.last.states().iter().map(|s| s.alpha).collect();
            assert_eq!(got, alpha);
            let got: Vec<u64> = trace.last.states().iter().map(|s| s.head_c).collect();
            assert_eq!(got, head);
        }
    }

    use proptest::prelude::*;

    proptest! {
        #[test]
        fn macro_ranges_hold_for_garbage(
            alphas in prop::collection::vec(-5_000i64..5_000, 6),
            k in 1i64..5,
            center in 0usize..6,
        ) {
            let net = generate(GraphKind::Star, 6, 0).unwrap();
            let tree = build_spanning_tree(&net, NodeId(center)).unwrap();
            let inst = ClusterInstance::new(net, tree, identity_ids(6), k).unwrap();
            let g = inst.config(&alphas, &[None; 6], &[0; 6]);
            for p in inst.net().all_nodes() {
                let m = inst.macros(&g, p);
                prop_assert!((-1..=k - 1).contains(&m.max_a_short));
                prop_assert!((k..=2 * k + 1).contains(&m.min_a_tall));
                prop_assert!((0..=2 * k).contains(&m.alpha));
                if let Some(next) = inst.run_ck(&g, p) {
                    let me = &g[p];
                    let changed = [next.alpha != me.alpha, next.par_c != me.par_c, next.head_c != me.head_c];
                    prop_assert_eq!(changed.iter().filter(|&&c| c).count(), 1);
                    let first = if me.alpha != m.alpha { 0 } else if me.par_c != m.par_c { 1 } else { 2 };
                    prop_assert!(changed[first]);
                }
            }
        }
    }
}
