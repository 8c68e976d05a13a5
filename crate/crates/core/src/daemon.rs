//! Daemons: scheduling policies of the distributed unfair daemon.
//!
//! Every policy returns a nonempty subset of the enabled nodes and nothing
//! more is promised, so each is a legal behavior of the unfair daemon.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::topology::NodeId;

pub const DEFAULT_P_SELECT: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DaemonPolicy {
    /// Every enabled node moves.
    Synchronous,
    /// One uniformly chosen enabled node moves.
    CentralRandom,
    /// One node moves, cycling through node indices.
    CentralRoundRobin,
    /// Each enabled node independently moves with probability `p_select`,
    /// redrawn until the selection is nonempty.
    DistributedRandom { p_select: f64 },
    /// One node moves, chosen to disable as few enabled nodes as possible.
    AdversarialLazy,
}

impl FromStr for DaemonPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sync" | "synchronous" => Ok(DaemonPolicy::Synchronous),
            "central" => Ok(DaemonPolicy::CentralRandom),
            "rr" => Ok(DaemonPolicy::CentralRoundRobin),
            "lazy" => Ok(DaemonPolicy::AdversarialLazy),
            "random" => Ok(DaemonPolicy::DistributedRandom { p_select: DEFAULT_P_SELECT }),
            other => {
                let p = other
                    .strip_prefix("random:")
                    .ok_or_else(|| format!("unknown daemon {other:?} (sync|central|rr|random:<p>|lazy)"))?;
                let p_select: f64 = p.parse().map_err(|_| format!("bad probability {p:?}"))?;
                if !(0.0..=1.0).contains(&p_select) {
                    return Err(format!("probability {p_select} outside [0, 1]"));
                }
                Ok(DaemonPolicy::DistributedRandom { p_select })
            }
        }
    }
}

impl fmt::Display for DaemonPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DaemonPolicy::Synchronous => f.write_str("sync"),
            DaemonPolicy::CentralRandom => f.write_str("central"),
            DaemonPolicy::CentralRoundRobin => f.write_str("rr"),
            DaemonPolicy::DistributedRandom { p_select } => write!(f, "random:{p_select}"),
            DaemonPolicy::AdversarialLazy => f.write_str("lazy"),
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DaemonError {
    #[error("no enabled node to select")]
    NothingEnabled,
}

/// A policy together with its scheduling state.
#[derive(Debug, Clone)]
pub struct Daemon {
    policy: DaemonPolicy,
    rng: ChaCha8Rng,
    last: Option<NodeId>,
}

impl Daemon {
    pub fn new(policy: DaemonPolicy, seed: u64) -> Self {
        Self::with_rng(policy, ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn with_rng(policy: DaemonPolicy, rng: ChaCha8Rng) -> Self {
        Daemon { policy, rng, last: None }
    }

    pub fn policy(&self) -> DaemonPolicy {
        self.policy
    }

    /// Chooses the nodes to activate among `enabled` (ascending, no
    /// duplicates). `newly_disabled(p)` must report how many enabled nodes a
    /// lone move of `p` would disable; only the lazy policy calls it.
    pub fn select(
        &mut self,
        enabled: &[NodeId],
        _step: usize,
        newly_disabled: impl Fn(NodeId) -> usize,
    ) -> Result<Vec<NodeId>, DaemonError> {
        if enabled.is_empty() {
            return Err(DaemonError::NothingEnabled);
        }
        let chosen = match self.policy {
            DaemonPolicy::Synchronous => enabled.to_vec(),
            DaemonPolicy::CentralRandom => vec![*enabled.choose(&mut self.rng).expect("nonempty")],
            DaemonPolicy::CentralRoundRobin => {
                let next = self.last.and_then(|last| enabled.iter().copied().find(|&p| p > last)).unwrap_or(enabled[0]);
                self.last = Some(next);
                vec![next]
            }
            DaemonPolicy::DistributedRandom { p_select } => {
                if p_select <= 0.0 {
                    vec![*enabled.choose(&mut self.rng).expect("nonempty")]
                } else {
                    loop {
                        let pick: Vec<NodeId> =
                            enabled.iter().copied().filter(|_| self.rng.gen_bool(p_select.min(1.0))).collect();
                        if !pick.is_empty() {
                            break pick;
                        }
                    }
                }
            }
            DaemonPolicy::AdversarialLazy => {
                let scores: Vec<usize> = enabled.iter().map(|&p| newly_disabled(p)).collect();
                let best = *scores.iter().min().expect("nonempty");
                let ties: Vec<NodeId> =
                    enabled.iter().zip(&scores).filter(|(_, &s)| s == best).map(|(&p, _)| p).collect();
                vec![*ties.choose(&mut self.rng).expect("nonempty")]
            }
        };
        Ok(chosen)
    }
}
