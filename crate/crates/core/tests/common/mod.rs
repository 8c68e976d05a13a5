//! Oracles shared by the integration tests. None of them go through the
//! library's own multiset or macro code.
#![allow(dead_code)]

use std::collections::BTreeMap;

use ckstab::kcluster::{identity_ids, permuted_ids};
use ckstab::topology::{build_spanning_tree, generate, GraphKind};
use ckstab::{ChannelId, ClusterInstance, NodeId};
use rand::Rng;

pub type Counts = BTreeMap<u64, usize>;

pub fn counts(values: &[u64]) -> Counts {
    let mut m = Counts::new();
    for &v in values {
        *m.entry(v).or_default() += 1;
    }
    m
}

/// `n` is below `m` iff `m` arises from `n` by removing a nonempty `x ⊆ m`
/// and adding `y`, with every element of `y` below some element of `x`.
/// Searched directly: every common part `z` is tried, `x = m − z`,
/// `y = n − z`.
pub fn dm_less_by_partition(n: &[u64], m: &[u64]) -> bool {
    let (cn, cm) = (counts(n), counts(m));
    let common: Vec<(u64, usize)> = cn.iter().filter_map(|(&v, &c)| cm.get(&v).map(|&d| (v, c.min(d)))).collect();
    let mut z = vec![0usize; common.len()];
    loop {
        let take = |base: &Counts| -> Vec<u64> {
            let mut out = Vec::new();
            for (&v, &c) in base {
                let used = common.iter().zip(&z).find(|((w, _), _)| *w == v).map_or(0, |(_, &k)| k);
                out.extend(std::iter::repeat_n(v, c - used));
            }
            out
        };
        let x = take(&cm);
        let y = take(&cn);
        if !x.is_empty() && y.iter().all(|&yv| x.iter().any(|&xv| yv < xv)) {
            return true;
        }
        // next common part, odometer style
        let mut i = 0;
        loop {
            if i == z.len() {
                return false;
            }
            if z[i] < common[i].1 {
                z[i] += 1;
                break;
            }
            z[i] = 0;
            i += 1;
        }
    }
}

/// Every multiset over `0..=max_value` with at most `max_size` elements, as
/// sorted vectors.
pub fn all_multisets(max_value: u64, max_size: usize) -> Vec<Vec<u64>> {
    let mut out = vec![vec![]];
    let mut frontier = vec![vec![]];
    for _ in 0..max_size {
        let mut next = Vec::new();
        for ms in &frontier {
            let lo = ms.last().copied().unwrap_or(0);
            for v in lo..=max_value {
                let mut e: Vec<u64> = ms.clone();
                e.push(v);
                next.push(e);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

/// Terminal configuration of C(k) computed by recursion over the tree:
/// alpha bottom-up, `par_c` from alpha, `head_c` down the `par_c` pointers.
pub struct TerminalOracle {
    pub alpha: Vec<i64>,
    pub par_c: Vec<Option<ChannelId>>,
    pub head_c: Vec<u64>,
}

pub fn terminal_oracle(inst: &ClusterInstance) -> TerminalOracle {
    let net = inst.net();
    let n = net.n();
    let k = inst.k();
    let parent: Vec<Option<usize>> =
        (0..n).map(|p| inst.tree().par[p].map(|c| net.neighbors(NodeId(p))[c.0].0)).collect();
    let mut children: Vec<Vec<usize>> = vec![vec![]; n];
    for (p, q) in parent.iter().enumerate() {
        if let Some(q) = q {
            children[*q].push(p);
        }
    }
    let depth = |mut p: usize| {
        let mut d = 0;
        while let Some(q) = parent[p] {
            p = q;
            d += 1;
        }
        d
    };
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&p| std::cmp::Reverse(depth(p)));
    let mut alpha = vec![0i64; n];
    for &p in &order {
        let short: Vec<i64> = children[p].iter().map(|&c| alpha[c]).filter(|&a| a < k).collect();
        let tall: Vec<i64> = children[p].iter().map(|&c| alpha[c]).filter(|&a| a >= k).collect();
        let max_short = short.into_iter().max().unwrap_or(-1);
        let min_tall = tall.into_iter().min().unwrap_or(2 * k + 1).min(2 * k + 1);
        alpha[p] = if max_short + min_tall <= 2 * k - 2 { min_tall + 1 } else { max_short + 1 };
    }
    let chan = |p: usize, q: usize| net.neighbors(NodeId(p)).iter().position(|&r| r.0 == q).map(ChannelId);
    let par_c: Vec<Option<ChannelId>> = (0..n)
        .map(|p| {
            if alpha[p] == k {
                None
            } else if alpha[p] < k {
                parent[p].and_then(|q| chan(p, q))
            } else {
                let min_tall = children[p].iter().map(|&c| alpha[c]).filter(|&a| a >= k).min()?;
                children[p].iter().filter(|&&c| alpha[c] == min_tall).filter_map(|&c| chan(p, c)).min()
            }
        })
        .collect();
    let ids = inst.ids();
    let head_c = (0..n)
        .map(|p| {
            let mut cur = p;
            for _ in 0..=n {
                let dominator = alpha[cur] == k || (alpha[cur] < k && parent[cur].is_none());
                if dominator {
                    return ids[cur];
                }
                let c = par_c[cur].expect("non-dominators point somewhere");
                cur = net.neighbors(NodeId(cur))[c.0].0;
            }
            panic!("cluster pointers from {p} loop");
        })
        .collect();
    TerminalOracle { alpha, par_c, head_c }
}

/// Random connected instance with `n` nodes, a random root and permuted
/// identifiers.
pub fn random_instance<R: Rng>(rng: &mut R, n: usize, k: i64) -> ClusterInstance {
    let net = generate(GraphKind::RandomConnected, n, rng.gen()).expect("connected");
    let root = NodeId(rng.gen_range(0..n));
    let tree = build_spanning_tree(&net, root).expect("connected");
    let ids = permuted_ids(n, rng);
    ClusterInstance::new(net, tree, ids, k).expect("valid instance")
}

pub fn fixture_instance() -> ClusterInstance {
    let net = generate(GraphKind::Path, 5, 0).expect("path");
    let tree = build_spanning_tree(&net, NodeId(4)).expect("path");
    ClusterInstance::new(net, tree, identity_ids(5), 1).expect("valid")
}
