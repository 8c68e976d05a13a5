//! Locally-shared-memory semantics with composite atomicity.
//!
//! A node reads its own state and the states of its neighbors through its
//! channels and, when some guard holds, atomically writes its own state. A
//! step activates a nonempty set of enabled nodes chosen by a daemon; every
//! activated node computes its successor state from the pre-step
//! configuration.

use std::fmt::Debug;

use serde::Serialize;
use thiserror::Error;

use crate::daemon::Daemon;
use crate::topology::{ChannelId, Network, NodeId};

/// Read access a node has during one evaluation of its program: its own state,
/// the states behind each of its channels, and the reply map.
#[derive(Clone, Copy)]
pub struct LocalView<'a, S> {
    net: &'a Network,
    states: &'a [S],
    node: NodeId,
}

impl<'a, S> LocalView<'a, S> {
    pub fn new(net: &'a Network, states: &'a [S], node: NodeId) -> Self {
        LocalView { net, states, node }
    }

    pub fn node(&self) -> NodeId {
        self.node
    }

    pub fn state(&self) -> &'a S {
        &self.states[self.node.0]
    }

    pub fn degree(&self) -> usize {
        self.net.degree(self.node)
    }

    pub fn channels(&self) -> impl Iterator<Item = ChannelId> + 'a {
        (0..self.net.degree(self.node)).map(ChannelId)
    }

    pub fn is_channel(&self, c: ChannelId) -> bool {
        self.net.is_channel(self.node, c)
    }

    /// State of the neighbor behind channel `c`.
    pub fn env(&self, c: ChannelId) -> &'a S {
        &self.states[self.net.peer(self.node, c).0]
    }

    /// Channel the neighbor behind `c` uses to reach this node.
    pub fn reply(&self, c: ChannelId) -> ChannelId {
        self.net.reply(self.node, c)
    }
}

/// Priority class of a step, from the highest-priority action executed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum StepClass {
    Alpha,
    Parc,
    Headc,
    Generic,
}

/// A deterministic distributed algorithm given as a per-node program.
pub trait Algorithm {
    type State: Clone + PartialEq + Debug;
    type ReadOnly: PartialEq + Debug;

    /// Successor state of the viewing node, or `None` when it is disabled.
    fn run(&self, view: &LocalView<'_, Self::State>) -> Option<Self::State>;

    fn ro_part(&self, state: &Self::State) -> Self::ReadOnly;

    /// Standing assumption over the read-only parts of a configuration.
    fn assume(&self, net: &Network, ro: &[Self::ReadOnly]) -> Result<(), String>;

    /// Which action the node would execute. Algorithms with prioritized
    /// actions override this; the default has a single action class.
    fn action(&self, view: &LocalView<'_, Self::State>) -> Option<StepClass> {
        self.run(view).map(|_| StepClass::Generic)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(transparent)]
pub struct Configuration<S> {
    states: Vec<S>,
}

impl<S> Configuration<S> {
    pub fn new(states: Vec<S>) -> Self {
        Configuration { states }
    }

    pub fn states(&self) -> &[S] {
        &self.states
    }

    pub fn into_states(self) -> Vec<S> {
        self.states
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn get(&self, p: NodeId) -> &S {
        &self.states[p.0]
    }

    pub fn set(&mut self, p: NodeId, s: S) {
        self.states[p.0] = s;
    }
}

impl<S> std::ops::Index<NodeId> for Configuration<S> {
    type Output = S;
    fn index(&self, p: NodeId) -> &S {
        &self.states[p.0]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepRecord<S> {
    /// Activated nodes, ascending.
    pub activated: Vec<NodeId>,
    /// New state of each activated node, in the order of `activated`.
    pub updates: Vec<S>,
    pub class: StepClass,
}

impl<S> StepRecord<S> {
    pub fn difference(&self, p: NodeId) -> Option<&S> {
        self.activated.binary_search(&p).ok().map(|i| &self.updates[i])
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EngineError {
    #[error("a step must activate at least one node")]
    EmptyActivation,
    #[error("node {0} was activated but is not enabled")]
    NotEnabled(NodeId),
    #[error("node {0} does not exist")]
    UnknownNode(NodeId),
    #[error("node {0} changed its read-only part")]
    ReadOnlyViolation(NodeId),
    #[error("node {0} is enabled but its move leaves its state unchanged")]
    NoChange(NodeId),
    #[error("configuration has {found} states, network has {expected} nodes")]
    WrongSize { expected: usize, found: usize },
    #[error("assumption violated by the initial configuration: {0}")]
    Assumption(String),
}

pub fn enabled<A: Algorithm>(alg: &A, net: &Network, g: &Configuration<A::State>, p: NodeId) -> bool {
    alg.run(&LocalView::new(net, g.states(), p)).is_some()
}

pub fn enabled_nodes<A: Algorithm>(alg: &A, net: &Network, g: &Configuration<A::State>) -> Vec<NodeId> {
    net.all_nodes().filter(|&p| enabled(alg, net, g, p)).collect()
}

pub fn is_terminal<A: Algorithm>(alg: &A, net: &Network, g: &Configuration<A::State>) -> bool {
    net.all_nodes().all(|p| !enabled(alg, net, g, p))
}

/// Highest-priority action class among the activated nodes, evaluated on the
/// pre-step configuration.
pub fn classify_step<A: Algorithm>(
    alg: &A,
    net: &Network,
    before: &Configuration<A::State>,
    activated: &[NodeId],
) -> StepClass {
    activated
        .iter()
        .filter_map(|&p| alg.action(&LocalView::new(net, before.states(), p)))
        .min()
        .unwrap_or(StepClass::Generic)
}

/// Successor configuration and the record of the step producing it.
pub type AppliedStep<S> = (Configuration<S>, StepRecord<S>);

/// Executes one step: every node of `activated` takes its `run` output
/// computed on `g`, every other node keeps its state.
pub fn apply_step<A: Algorithm>(
    alg: &A,
    net: &Network,
    g: &Configuration<A::State>,
    activated: &[NodeId],
) -> Result<AppliedStep<A::State>, EngineError> {
    if activated.is_empty() {
        return Err(EngineError::EmptyActivation);
    }
    let mut activated = activated.to_vec();
    activated.sort_unstable();
    activated.dedup();
    let mut updates = Vec::with_capacity(activated.len());
    for &p in &activated {
        if p.0 >= net.n() {
            return Err(EngineError::UnknownNode(p));
        }
        let view = LocalView::new(net, g.states(), p);
        let next = alg.run(&view).ok_or(EngineError::NotEnabled(p))?;
        if alg.ro_part(&next) != alg.ro_part(view.state()) {
            return Err(EngineError::ReadOnlyViolation(p));
        }
        if &next == view.state() {
            return Err(EngineError::NoChange(p));
        }
        updates.push(next);
    }
    let class = classify_step(alg, net, g, &activated);
    let mut after = g.clone();
    for (&p, s) in activated.iter().zip(&updates) {
        after.set(p, s.clone());
    }
    Ok((after, StepRecord { activated, updates, class }))
}

/// Observer invoked after every step of an execution.
pub trait Monitor<S> {
    fn observe(
        &mut self,
        step: usize,
        before: &Configuration<S>,
        after: &Configuration<S>,
        record: &StepRecord<S>,
    ) -> Result<(), String>;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum Outcome {
    Terminal,
    BudgetExhausted,
    MonitorViolation { step: usize, message: String },
}

/// Execution trace storing every step difference plus a full configuration
/// every [`ExecutionTrace::CHECKPOINT`] steps.
#[derive(Debug, Clone)]
pub struct ExecutionTrace<S> {
    pub initial: Configuration<S>,
    pub steps: Vec<StepRecord<S>>,
    checkpoints: Vec<Configuration<S>>,
    pub last: Configuration<S>,
    pub outcome: Outcome,
}

impl<S: Clone> ExecutionTrace<S> {
    pub const CHECKPOINT: usize = 64;

    pub fn is_terminal(&self) -> bool {
        self.outcome == Outcome::Terminal
    }

    pub fn step_count(&self) -> usize {
        self.steps.len()
    }

    /// Configuration after the first `i` steps.
    pub fn config_at(&self, i: usize) -> Configuration<S> {
        assert!(i <= self.steps.len(), "step {i} beyond trace of {}", self.steps.len());
        let cp = i / Self::CHECKPOINT;
        let mut g = if cp == 0 { self.initial.clone() } else { self.checkpoints[cp - 1].clone() };
        for rec in &self.steps[cp * Self::CHECKPOINT..i] {
            for (&p, s) in rec.activated.iter().zip(&rec.updates) {
                g.set(p, s.clone());
            }
        }
        g
    }
}

pub fn default_step_budget(n: usize) -> usize {
    10 * n.pow(3)
}

/// Runs the algorithm from `g0` until a terminal configuration, the step
/// budget, or the first monitor violation.
pub fn execute<A: Algorithm>(
    alg: &A,
    net: &Network,
    g0: Configuration<A::State>,
    daemon: &mut Daemon,
    max_steps: usize,
    monitors: &mut [&mut dyn Monitor<A::State>],
) -> Result<ExecutionTrace<A::State>, EngineError> {
    if g0.len() != net.n() {
        return Err(EngineError::WrongSize { expected: net.n(), found: g0.len() });
    }
    let ro: Vec<_> = g0.states().iter().map(|s| alg.ro_part(s)).collect();
    alg.assume(net, &ro).map_err(EngineError::Assumption)?;

    let mut trace = ExecutionTrace {
        initial: g0.clone(),
        steps: Vec::new(),
        checkpoints: Vec::new(),
        last: g0,
        outcome: Outcome::BudgetExhausted,
    };
    loop {
        let enabled = enabled_nodes(alg, net, &trace.last);
        if enabled.is_empty() {
            trace.outcome = Outcome::Terminal;
            return Ok(trace);
        }
        let step = trace.steps.len();
        if step >= max_steps {
            trace.outcome = Outcome::BudgetExhausted;
            return Ok(trace);
        }
        let current = &trace.last;
        let chosen = daemon
            .select(&enabled, step, |p| newly_disabled(alg, net, current, &enabled, p))
            .map_err(|_| EngineError::EmptyActivation)?;
        let (after, record) = apply_step(alg, net, &trace.last, &chosen)?;
        let mut violation = None;
        for m in monitors.iter_mut() {
            if let Err(message) = m.observe(step, &trace.last, &after, &record) {
                violation = Some(message);
                break;
            }
        }
        trace.steps.push(record);
        trace.last = after;
        if trace.steps.len() % ExecutionTrace::<A::State>::CHECKPOINT == 0 {
            trace.checkpoints.push(trace.last.clone());
        }
        if let Some(message) = violation {
            trace.outcome = Outcome::MonitorViolation { step, message };
            return Ok(trace);
        }
    }
}

/// Number of currently enabled nodes that would be disabled after `p` moves
/// alone.
fn newly_disabled<A: Algorithm>(
    alg: &A,
    net: &Network,
    g: &Configuration<A::State>,
    enabled: &[NodeId],
    p: NodeId,
) -> usize {
    let Ok((after, _)) = apply_step(alg, net, g, &[p]) else {
        return 0;
    };
    enabled.iter().filter(|&&q| !self::enabled(alg, net, &after, q)).count()
}
