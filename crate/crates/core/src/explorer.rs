//! Exhaustive model checking of C(k) on small instances.
//!
//! Every node ranges over a bounded domain: `alpha ∈ {−1, …, 2k+1}`, `par_c`
//! over the node's channels and ⊥, `head_c` over the identifiers plus one
//! ghost identifier. Values outside that alpha window behave like the window's
//! ends, since the macros clamp with −1 and 2k+1. A configuration is stored as
//! a mixed-radix integer, and the transition graph (all nonempty subsets of
//! enabled nodes) is searched depth first for cycles. Each transition is also
//! checked against the step-class measure contract, and each sink against the
//! full terminal checks.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::engine::{is_terminal, Configuration, StepClass};
use crate::kcluster::{check_step_measure, CkAction, CkState, ClusterInstance, MeasureViolation, NodePotentials};
use crate::speccheck::check_terminal;
use crate::topology::{ChannelId, NodeId};

pub const DEFAULT_BUDGET: u64 = 20_000_000;
pub const DEFAULT_MAX_N: usize = 4;
/// Failures of each kind kept in a verdict.
const KEEP: usize = 16;
/// Largest domain held in flat arrays; larger ones go through hash maps.
const DENSE_LIMIT: u64 = 1 << 27;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum InitDomain {
    /// Every configuration of the bounded domain.
    Full,
    /// `count` configurations drawn uniformly from the bounded domain.
    Sampled { count: u64, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ExploreOptions {
    /// Most configurations visited before giving up with a partial verdict.
    pub budget: u64,
    pub init: InitDomain,
    pub max_n: usize,
}

impl Default for ExploreOptions {
    fn default() -> Self {
        ExploreOptions { budget: DEFAULT_BUDGET, init: InitDomain::Full, max_n: DEFAULT_MAX_N }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ExploreError {
    #[error("{n} nodes exceeds the exploration bound of {max}")]
    TooLarge { n: usize, max: usize },
    #[error("bounded domain of {0} configurations does not fit in 64 bits")]
    DomainOverflow(String),
}

/// Mixed-radix codec between configurations of one instance and integers.
#[derive(Debug, Clone)]
pub struct Codec {
    base: Vec<CkState>,
    alpha_radix: u64,
    chan_radix: Vec<u64>,
    head_radix: u64,
    strides: Vec<u64>,
    ids_sorted: Vec<u64>,
    ghost: u64,
    size: u64,
}

impl Codec {
    pub fn new(inst: &ClusterInstance) -> Result<Self, ExploreError> {
        let n = inst.n();
        let base = inst.zero_config().into_states();
        let alpha_radix = 2 * inst.k() as u64 + 3;
        let head_radix = n as u64 + 1;
        let chan_radix: Vec<u64> = inst.net().all_nodes().map(|p| inst.net().degree(p) as u64 + 1).collect();
        let mut strides = Vec::with_capacity(n);
        let mut size: u64 = 1;
        for &c in &chan_radix {
            strides.push(size);
            size = size
                .checked_mul(alpha_radix * c * head_radix)
                .ok_or_else(|| ExploreError::DomainOverflow(format!("{n} nodes, k = {}", inst.k())))?;
        }
        let mut ids_sorted = inst.ids().to_vec();
        ids_sorted.sort_unstable();
        let ghost = ids_sorted.last().copied().unwrap_or(0) + 1;
        Ok(Codec { base, alpha_radix, chan_radix, head_radix, strides, ids_sorted, ghost, size })
    }

    /// Number of configurations in the bounded domain.
    pub fn size(&self) -> u64 {
        self.size
    }

    pub fn ghost(&self) -> u64 {
        self.ghost
    }

    pub fn decode(&self, code: u64) -> Vec<CkState> {
        let mut states = self.base.clone();
        for (p, s) in states.iter_mut().enumerate() {
            let mut d = (code / self.strides[p]) % (self.alpha_radix * self.chan_radix[p] * self.head_radix);
            s.alpha = (d % self.alpha_radix) as i64 - 1;
            d /= self.alpha_radix;
            let c = d % self.chan_radix[p];
            s.par_c = (c > 0).then(|| ChannelId(c as usize - 1));
            d /= self.chan_radix[p];
            s.head_c = self.ids_sorted.get(d as usize).copied().unwrap_or(self.ghost);
        }
        states
    }

    /// Code of a configuration, or `None` if some value leaves the domain.
    pub fn encode(&self, states: &[CkState]) -> Option<u64> {
        let mut code = 0;
        for (p, s) in states.iter().enumerate() {
            let a = u64::try_from(s.alpha + 1).ok().filter(|&a| a < self.alpha_radix)?;
            let c = match s.par_c {
                None => 0,
                Some(ch) => Some(ch.0 as u64 + 1).filter(|&c| c < self.chan_radix[p])?,
            };
            let h = match self.ids_sorted.binary_search(&s.head_c) {
                Ok(i) => i as u64,
                Err(_) if s.head_c == self.ghost => self.ids_sorted.len() as u64,
                Err(_) => return None,
            };
            code += self.strides[p] * (a + self.alpha_radix * (c + self.chan_radix[p] * h));
        }
        Some(code)
    }
}

/// One transition of the step relation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Successor {
    pub activated: Vec<NodeId>,
    pub class: StepClass,
    pub states: Vec<CkState>,
}

/// Every transition out of a configuration: one per nonempty subset of the
/// enabled nodes. Empty for terminal configurations.
pub fn successors(inst: &ClusterInstance, states: &[CkState]) -> Vec<Successor> {
    let moves: Vec<(NodeId, CkAction, CkState)> = inst
        .net()
        .all_nodes()
        .filter_map(|p| {
            let view = crate::engine::LocalView::new(inst.net(), states, p);
            inst.alg().step(&view).map(|(a, s)| (p, a, s))
        })
        .collect();
    let e = moves.len();
    assert!(e < 32, "too many enabled nodes to enumerate subsets");
    (1u32..1 << e)
        .map(|mask| {
            let mut next = states.to_vec();
            let mut activated = Vec::new();
            let mut class = CkAction::HeadC;
            for (i, (p, a, s)) in moves.iter().enumerate() {
                if mask & (1 << i) != 0 {
                    next[p.0] = s.clone();
                    activated.push(*p);
                    class = class.min(*a);
                }
            }
            Successor { activated, class: class.into(), states: next }
        })
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct SpaceStats {
    pub domain_size: u64,
    pub initial: u64,
    pub explored: u64,
    pub transitions: u64,
    pub sinks: u64,
    /// Longest execution found, in steps. Exact when the search completes.
    pub longest_execution: u64,
}

/// A reachable cycle: a path from an initial configuration into the loop,
/// then the loop itself, closed by its first configuration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Lasso {
    pub stem: Vec<Configuration<CkState>>,
    pub cycle: Vec<Configuration<CkState>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SinkFailure {
    pub config: Configuration<CkState>,
    pub failed: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TransitionFailure {
    pub from: Configuration<CkState>,
    pub activated: Vec<NodeId>,
    pub to: Configuration<CkState>,
    pub violation: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct Verdict {
    /// The whole initial domain and everything reachable from it was searched.
    pub complete: bool,
    pub acyclic: bool,
    pub legit_sinks: bool,
    /// Every transition satisfied the step-class measure contract.
    pub measure_ok: bool,
    /// No transition left the bounded domain or wrote alpha outside `[0, 2k]`.
    pub range_closed: bool,
    /// All of the above: silent self-stabilization holds on this instance.
    pub certified: bool,
    pub stats: SpaceStats,
    pub lasso: Option<Lasso>,
    pub sink_failures: Vec<SinkFailure>,
    pub transition_failures: Vec<TransitionFailure>,
    pub range_failures: Vec<TransitionFailure>,
}

/// Result of an exploration: the verdict and the terminal configurations
/// found.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Exploration {
    pub verdict: Verdict,
    pub sinks: Vec<Configuration<CkState>>,
}

const WHITE: u8 = 0;
const GREY: u8 = 1;
const BLACK: u8 = 2;

/// Per-configuration search data.
enum Store {
    Dense { colour: Vec<u8>, height: Vec<u32>, pots: Vec<u8>, width: usize },
    Sparse { colour: HashMap<u64, (u8, u32)>, pots: HashMap<u64, Vec<u8>> },
}

impl Store {
    fn new(size: u64, n: usize) -> Self {
        if size <= DENSE_LIMIT {
            let size = size as usize;
            let width = 3 * n;
            Store::Dense { colour: vec![WHITE; size], height: vec![0; size], pots: vec![u8::MAX; size * width], width }
        } else {
            Store::Sparse { colour: HashMap::new(), pots: HashMap::new() }
        }
    }

    fn colour(&self, code: u64) -> u8 {
        match self {
            Store::Dense { colour, .. } => colour[code as usize],
            Store::Sparse { colour, .. } => colour.get(&code).map_or(WHITE, |e| e.0),
        }
    }

    fn set_colour(&mut self, code: u64, c: u8) {
        match self {
            Store::Dense { colour, .. } => colour[code as usize] = c,
            Store::Sparse { colour, .. } => colour.entry(code).or_default().0 = c,
        }
    }

    fn height(&self, code: u64) -> u32 {
        match self {
            Store::Dense { height, .. } => height[code as usize],
            Store::Sparse { colour, .. } => colour.get(&code).map_or(0, |e| e.1),
        }
    }

    fn set_height(&mut self, code: u64, h: u32) {
        match self {
            Store::Dense { height, .. } => height[code as usize] = h,
            Store::Sparse { colour, .. } => colour.entry(code).or_default().1 = h,
        }
    }

    /// Potentials packed as bytes, alpha then parc then headc.
    fn pots(&mut self, code: u64, compute: impl FnOnce() -> Vec<u8>) -> Vec<u8> {
        match self {
            Store::Dense { pots, width, .. } => {
                let slot = &mut pots[code as usize * *width..(code as usize + 1) * *width];
                if slot.first() == Some(&u8::MAX) || slot.is_empty() {
                    slot.copy_from_slice(&compute());
                }
                slot.to_vec()
            }
            Store::Sparse { pots, .. } => pots.entry(code).or_insert_with(compute).clone(),
        }
    }
}

fn pack(p: &NodePotentials) -> Vec<u8> {
    p.alpha
        .iter()
        .chain(&p.parc)
        .chain(&p.headc)
        .map(|&v| u8::try_from(v).expect("potentials of small instances fit a byte"))
        .collect()
}

fn unpack(bytes: &[u8]) -> NodePotentials {
    let n = bytes.len() / 3;
    let part = |i: usize| bytes[i * n..(i + 1) * n].iter().map(|&b| u64::from(b)).collect();
    NodePotentials { alpha: part(0), parc: part(1), headc: part(2) }
}

struct Frame {
    code: u64,
    succ: Vec<u64>,
    next: usize,
    best: u32,
}

struct Search<'a> {
    inst: &'a ClusterInstance,
    codec: Codec,
    store: Store,
    verdict: Verdict,
    sinks: Vec<Configuration<CkState>>,
    budget: u64,
}

impl Search<'_> {
    fn potentials(&mut self, code: u64, states: &[CkState]) -> Result<NodePotentials, String> {
        let mut err = None;
        let inst = self.inst;
        let bytes = self.store.pots(code, || match inst.potentials_of(states) {
            Ok(p) => pack(&p),
            Err(e) => {
                err = Some(e.to_string());
                vec![0; 3 * states.len()]
            }
        });
        match err {
            Some(e) => Err(e),
            None => Ok(unpack(&bytes)),
        }
    }

    fn transition_failure(&mut self, from: &[CkState], s: &Successor, violation: String, range: bool) {
        let list = if range { &mut self.verdict.range_failures } else { &mut self.verdict.transition_failures };
        if list.len() < KEEP {
            list.push(TransitionFailure {
                from: Configuration::new(from.to_vec()),
                activated: s.activated.clone(),
                to: Configuration::new(s.states.clone()),
                violation,
            });
        }
        if range {
            self.verdict.range_closed = false;
        } else {
            self.verdict.measure_ok = false;
        }
    }

    /// Marks `code` grey and computes its successor codes, checking every
    /// transition and, for a sink, the terminal configuration.
    fn expand(&mut self, code: u64) -> Vec<u64> {
        self.store.set_colour(code, GREY);
        self.verdict.stats.explored += 1;
        let states = self.codec.decode(code);
        let succ = successors(self.inst, &states);
        if succ.is_empty() {
            self.sink(&states);
            return Vec::new();
        }
        let before = match self.potentials(code, &states) {
            Ok(p) => Some(p),
            Err(e) => {
                self.transition_failure(&states, &succ[0], e, false);
                None
            }
        };
        let mut codes = Vec::with_capacity(succ.len());
        for s in &succ {
            self.verdict.stats.transitions += 1;
            let Some(next) = self.codec.encode(&s.states) else {
                self.transition_failure(&states, s, "successor leaves the bounded domain".into(), true);
                continue;
            };
            codes.push(next);
            let after = match self.potentials(next, &s.states) {
                Ok(p) => p,
                Err(e) => {
                    self.transition_failure(&states, s, e, false);
                    continue;
                }
            };
            let Some(before) = &before else { continue };
            let moved: Vec<(NodeId, i64)> = s.activated.iter().map(|&p| (p, s.states[p.0].alpha)).collect();
            match check_step_measure(self.inst, before, &after, s.class, &moved) {
                Ok(()) => {}
                Err(v @ MeasureViolation::AlphaRange { .. }) => {
                    self.transition_failure(&states, s, format!("{v:?}"), true)
                }
                Err(v) => self.transition_failure(&states, s, format!("{v:?}"), false),
            }
        }
        codes
    }

    fn sink(&mut self, states: &[CkState]) {
        self.verdict.stats.sinks += 1;
        let g = Configuration::new(states.to_vec());
        let mut failed: Vec<String> = check_terminal(self.inst, &g).failed().into_iter().map(String::from).collect();
        if !is_terminal(self.inst.alg(), self.inst.net(), &g) {
            failed.push("engine_terminal".into());
        }
        if !failed.is_empty() {
            self.verdict.legit_sinks = false;
            if self.verdict.sink_failures.len() < KEEP {
                self.verdict.sink_failures.push(SinkFailure { config: g.clone(), failed });
            }
        }
        self.sinks.push(g);
    }

    /// Depth-first search from `root`. Returns false when the search must stop
    /// (cycle found or budget spent).
    fn dfs(&mut self, root: u64) -> bool {
        if self.store.colour(root) != WHITE {
            return true;
        }
        if self.verdict.stats.explored >= self.budget {
            return false;
        }
        let succ = self.expand(root);
        let mut stack = vec![Frame { code: root, succ, next: 0, best: 0 }];
        while let Some(top) = stack.last_mut() {
            if top.next < top.succ.len() {
                let v = top.succ[top.next];
                top.next += 1;
                match self.store.colour(v) {
                    WHITE => {
                        if self.verdict.stats.explored >= self.budget {
                            return false;
                        }
                        let succ = self.expand(v);
                        stack.push(Frame { code: v, succ, next: 0, best: 0 });
                    }
                    GREY => {
                        self.lasso(&stack, v);
                        return false;
                    }
                    _ => top.best = top.best.max(self.store.height(v) + 1),
                }
            } else {
                let done = stack.pop().expect("nonempty");
                self.store.set_colour(done.code, BLACK);
                self.store.set_height(done.code, done.best);
                self.verdict.stats.longest_execution = self.verdict.stats.longest_execution.max(u64::from(done.best));
                if let Some(parent) = stack.last_mut() {
                    parent.best = parent.best.max(done.best + 1);
                }
            }
        }
        true
    }

    fn lasso(&mut self, stack: &[Frame], back: u64) {
        self.verdict.acyclic = false;
        let pos = stack.iter().position(|f| f.code == back).expect("grey nodes are on the stack");
        let config = |code: u64| Configuration::new(self.codec.decode(code));
        let stem = stack[..pos].iter().map(|f| config(f.code)).collect();
        let mut cycle: Vec<_> = stack[pos..].iter().map(|f| config(f.code)).collect();
        cycle.push(config(back));
        self.verdict.lasso = Some(Lasso { stem, cycle });
    }
}

/// Explores the transition graph of `inst` from the chosen initial domain.
pub fn explore(inst: &ClusterInstance, opts: &ExploreOptions) -> Result<Exploration, ExploreError> {
    if inst.n() > opts.max_n {
        return Err(ExploreError::TooLarge { n: inst.n(), max: opts.max_n });
    }
    let codec = Codec::new(inst)?;
    let size = codec.size();
    let mut search = Search {
        inst,
        store: Store::new(size, inst.n()),
        codec,
        verdict: Verdict {
            acyclic: true,
            legit_sinks: true,
            measure_ok: true,
            range_closed: true,
            ..Verdict::default()
        },
        sinks: Vec::new(),
        budget: opts.budget,
    };
    search.verdict.stats.domain_size = size;
    let mut finished = true;
    match opts.init {
        InitDomain::Full => {
            search.verdict.stats.initial = size;
            for code in 0..size {
                if !search.dfs(code) {
                    finished = false;
                    break;
                }
            }
        }
        InitDomain::Sampled { count, seed } => {
            search.verdict.stats.initial = count;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for _ in 0..count {
                let code = rng.gen_range(0..size);
                if !search.dfs(code) {
                    finished = false;
                    break;
                }
            }
        }
    }
    let mut verdict = search.verdict;
    verdict.complete = finished;
    verdict.certified =
        verdict.complete && verdict.acyclic && verdict.legit_sinks && verdict.measure_ok && verdict.range_closed;
    let mut sinks = search.sinks;
    sinks.sort_by_key(|g| serde_json::to_string(g).unwrap_or_default());
    Ok(Exploration { verdict, sinks })
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct RangeVerdict {
    pub configs_checked: u64,
    pub moves_checked: u64,
    pub complete: bool,
    pub violations: Vec<TransitionFailure>,
}

impl RangeVerdict {
    pub fn passed(&self) -> bool {
        self.complete && self.violations.is_empty()
    }
}

/// Checks that every alpha move from every configuration of the bounded
/// domain writes a value in `[0, 2k]`, so that the domain is closed after the
/// first move of each node.
pub fn check_range_closure(inst: &ClusterInstance, opts: &ExploreOptions) -> Result<RangeVerdict, ExploreError> {
    if inst.n() > opts.max_n {
        return Err(ExploreError::TooLarge { n: inst.n(), max: opts.max_n });
    }
    let codec = Codec::new(inst)?;
    let two_k = 2 * inst.k();
    let mut verdict = RangeVerdict::default();
    let limit = codec.size().min(opts.budget);
    for code in 0..limit {
        let states = codec.decode(code);
        verdict.configs_checked += 1;
        for p in inst.net().all_nodes() {
            let view = crate::engine::LocalView::new(inst.net(), &states, p);
            if let Some((CkAction::Alpha, next)) = inst.alg().step(&view) {
                verdict.moves_checked += 1;
                if !(0..=two_k).contains(&next.alpha) && verdict.violations.len() < KEEP {
                    let mut to = states.clone();
                    let alpha = next.alpha;
                    to[p.0] = next;
                    verdict.violations.push(TransitionFailure {
                        from: Configuration::new(states.clone()),
                        activated: vec![p],
                        to: Configuration::new(to),
                        violation: format!("node {p} writes alpha {alpha}"),
                    });
                }
            }
        }
    }
    verdict.complete = limit == codec.size();
    Ok(verdict)
}
