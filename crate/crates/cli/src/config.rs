//! Experiment configuration: a flat TOML file, overridable from the command
//! line.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use ckstab::topology::{build_spanning_tree, generate, load_network, GraphKind};
use ckstab::{ClusterInstance, Network, NodeId};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Where the network comes from: a generator name or an edge-list file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GraphSource {
    Kind(GraphKind),
    File(PathBuf),
}

impl GraphSource {
    pub fn parse(s: &str) -> Self {
        match s.parse::<GraphKind>() {
            Ok(kind) => GraphSource::Kind(kind),
            Err(_) => GraphSource::File(PathBuf::from(s)),
        }
    }

    pub fn load(&self, n: usize, seed: u64) -> Result<Network> {
        match self {
            GraphSource::Kind(kind) => Ok(generate(*kind, n, seed)?),
            GraphSource::File(path) => {
                let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                load_network(&text).with_context(|| format!("parsing {}", path.display()))
            }
        }
    }
}

impl std::fmt::Display for GraphSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            GraphSource::Kind(k) => write!(f, "{k}"),
            GraphSource::File(p) => write!(f, "{}", p.display()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IdAssignment {
    Identity,
    Permuted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitKind {
    /// Sampled arbitrary configuration per trial.
    Random,
    /// Every variable zero.
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub graph: GraphSource,
    pub n: usize,
    pub root: usize,
    pub k: i64,
    pub daemon: String,
    pub seed: u64,
    pub trials: u64,
    /// Step budget per trial; `10·n³` when absent.
    pub max_steps: Option<usize>,
    pub ids: IdAssignment,
    pub init: InitKind,
    pub inject_bad_channels: bool,
    pub monitor: bool,
    pub legitimacy: bool,
    pub summary: Option<PathBuf>,
    pub trace_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            graph: GraphSource::Kind(GraphKind::Path),
            n: 5,
            root: 0,
            k: 1,
            daemon: "sync".into(),
            seed: 0,
            trials: 1,
            max_steps: None,
            ids: IdAssignment::Identity,
            init: InitKind::Random,
            inject_bad_channels: false,
            monitor: true,
            legitimacy: true,
            summary: None,
            trace_dir: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    /// The network, spanning tree and identifiers described by the config.
    /// Identifiers are permuted with their own stream of the seed.
    pub fn instance(&self) -> Result<ClusterInstance> {
        let net = self.graph.load(self.n, self.seed)?;
        instance_on(net, self.root, self.k, self.ids, self.seed)
    }
}

pub fn instance_on(net: Network, root: usize, k: i64, ids: IdAssignment, seed: u64) -> Result<ClusterInstance> {
    if root >= net.n() {
        bail!("root {root} out of range for {} nodes", net.n());
    }
    let tree = build_spanning_tree(&net, NodeId(root))?;
    let ids = match ids {
        IdAssignment::Identity => ckstab::kcluster::identity_ids(net.n()),
        IdAssignment::Permuted => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(u64::MAX);
            ckstab::kcluster::permuted_ids(net.n(), &mut rng)
        }
    };
    Ok(ClusterInstance::new(net, tree, ids, k)?)
}
