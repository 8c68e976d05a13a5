//! Simulation and verification of self-stabilizing algorithms in the
//! locally-shared-memory model with composite atomicity, and the silent
//! k-clustering algorithm C(k) built on it.
//!
//! - [`topology`]: networks, channels, rooted spanning trees, generators.
//! - [`engine`]: configurations, steps, executions, monitors.
//! - [`daemon`]: scheduling policies of the distributed unfair daemon.
//! - [`order`]: multisets of naturals, the Dershowitz–Manna order, decrease
//!   criteria.
//! - [`kcluster`]: the algorithm, its potentials and the measure monitor.
//! - [`speccheck`]: checks on terminal configurations.
//! - [`explorer`]: exhaustive exploration of small instances.
//! - [`trace`]: JSON-lines export of executions.

pub mod daemon;
pub mod engine;
pub mod explorer;
pub mod kcluster;
pub mod order;
pub mod speccheck;
pub mod topology;
pub mod trace;

pub use daemon::{Daemon, DaemonPolicy};
pub use engine::{execute, Configuration, ExecutionTrace, Outcome};
pub use kcluster::{CkState, ClusterInstance, KClustering};
pub use topology::{ChannelId, Network, NodeId, SpanTree};
