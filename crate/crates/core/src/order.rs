//! Finite multisets of naturals under the Dershowitz–Manna order, the
//! lexicographic product of three such multisets, and the local/global
//! decrease criteria over per-node potentials.

use std::fmt;

use serde::{Serialize, Serializer};
use smallvec::SmallVec;

use crate::topology::NodeId;

/// Multiset of naturals stored as a sorted multiplicity map with no zero
/// counts, so structural equality is multiset equality.
#[derive(Clone, Default, PartialEq, Eq, Hash)]
pub struct NatMultiset {
    counts: SmallVec<[(u64, usize); 8]>,
}

impl NatMultiset {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, value: u64) {
        self.insert_many(value, 1);
    }

    pub fn insert_many(&mut self, value: u64, count: usize) {
        if count == 0 {
            return;
        }
        match self.counts.binary_search_by_key(&value, |&(v, _)| v) {
            Ok(i) => self.counts[i].1 += count,
            Err(i) => self.counts.insert(i, (value, count)),
        }
    }

    pub fn count(&self, value: u64) -> usize {
        self.counts.binary_search_by_key(&value, |&(v, _)| v).map_or(0, |i| self.counts[i].1)
    }

    /// Total number of elements, counting multiplicity.
    pub fn len(&self) -> usize {
        self.counts.iter().map(|&(_, c)| c).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    /// `(value, multiplicity)` pairs in ascending value order.
    pub fn multiplicities(&self) -> impl DoubleEndedIterator<Item = (u64, usize)> + '_ {
        self.counts.iter().copied()
    }

    /// Elements in ascending order, repeated by multiplicity.
    pub fn elements(&self) -> impl Iterator<Item = u64> + '_ {
        self.counts.iter().flat_map(|&(v, c)| std::iter::repeat_n(v, c))
    }
}

impl FromIterator<u64> for NatMultiset {
    fn from_iter<I: IntoIterator<Item = u64>>(iter: I) -> Self {
        let mut v: SmallVec<[u64; 16]> = iter.into_iter().collect();
        v.sort_unstable();
        let mut counts: SmallVec<[(u64, usize); 8]> = SmallVec::new();
        for x in v {
            match counts.last_mut() {
                Some((last, c)) if *last == x => *c += 1,
                _ => counts.push((x, 1)),
            }
        }
        NatMultiset { counts }
    }
}

impl fmt::Debug for NatMultiset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.elements()).finish()
    }
}

impl Serialize for NatMultiset {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_seq(self.elements())
    }
}

pub fn ms_equal(a: &NatMultiset, b: &NatMultiset) -> bool {
    a == b
}

/// Dershowitz–Manna comparison: `n` is strictly below `m`.
///
/// Over a total order, `n ≺ m` iff `n ≠ m` and every value `v` with
/// `n(v) > m(v)` is dominated by some `w > v` with `m(w) > n(w)`. Scanning
/// values from the top, that is the same as asking that the largest value whose
/// multiplicities differ be more frequent in `m`.
pub fn dm_less(n: &NatMultiset, m: &NatMultiset) -> bool {
    let mut a = n.counts.iter().rev().peekable();
    let mut b = m.counts.iter().rev().peekable();
    loop {
        match (a.peek(), b.peek()) {
            (None, None) => return false,
            (Some(_), None) => return false,
            (None, Some(_)) => return true,
            (Some(&&(va, ca)), Some(&&(vb, cb))) => {
                if va > vb {
                    return false;
                }
                if vb > va {
                    return true;
                }
                if ca != cb {
                    return cb > ca;
                }
                a.next();
                b.next();
            }
        }
    }
}

/// The three global potentials of a configuration, compared
/// lexicographically in priority order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MeasureTriple {
    pub alpha: NatMultiset,
    pub parc: NatMultiset,
    pub headc: NatMultiset,
}

pub fn lex_less(a: &MeasureTriple, b: &MeasureTriple) -> bool {
    dm_less(&a.alpha, &b.alpha)
        || (ms_equal(&a.alpha, &b.alpha)
            && (dm_less(&a.parc, &b.parc) || (ms_equal(&a.parc, &b.parc) && dm_less(&a.headc, &b.headc))))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "verdict", content = "node", rename_all = "kebab-case")]
pub enum CriteriaVerdict {
    Ok,
    /// The node's potential rose and no changed node had a larger potential
    /// before the step.
    LocalViolation(NodeId),
    /// No potential changed at all.
    GlobalViolation,
}

/// Local and global decrease criteria over per-node potentials. Both slices
/// are indexed by node.
pub fn check_criteria(before: &[u64], after: &[u64]) -> CriteriaVerdict {
    assert_eq!(before.len(), after.len(), "potential maps must cover the same nodes");
    let changed = || before.iter().zip(after).filter(|(b, a)| b != a);
    if changed().next().is_none() {
        return CriteriaVerdict::GlobalViolation;
    }
    let max_changed_before = changed().map(|(&b, _)| b).max().unwrap_or(0);
    for (p, (&b, &a)) in before.iter().zip(after).enumerate() {
        if b < a && a >= max_changed_before {
            return CriteriaVerdict::LocalViolation(NodeId(p));
        }
    }
    CriteriaVerdict::Ok
}
