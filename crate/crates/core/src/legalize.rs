//! Trace-replay repair of raw candidates.
//!
//! Replays the block sequence. For every candidate `K` we keep the
//! blocks seen since the stream last touched `K`; when the stream returns to
//! `K` those pending blocks join it. When the stream enters a block owned by
//! a candidate that is *foreign* to `K`, `K` has been exited: its pending
//! blocks are dropped and nothing is collected until `K` is entered again.
//!
//! Candidates that partially overlap are fragments of one kernel and never
//! clear each other, unless the overlap is a nesting: an inner loop's
//! candidate, whose blocks all run far more often than the rest of its
//! host, is cleared by the host but never clears it. Disjoint candidates are
//! foreign to each other. Blocks shared with `K` never clear it.
//!
//! Growth can turn a disjoint pair into an overlapping one, so the replay
//! is repeated on the grown sets until nothing changes (usually one extra
//! pass); this makes legalizing legalized kernels a no-op. Candidates with
//! identical final sets are then fused and the subset relation is reduced
//! to parent/child links.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::detect::KernelCandidate;
use crate::scalar::Score;
use crate::trace::{BlockId, Trace};

/// Anything that can seed legalization: a seed block plus a block set.
pub trait BlockSet {
    fn seed_block(&self) -> BlockId;
    fn members(&self) -> Vec<BlockId>;
}

impl<S: Score> BlockSet for KernelCandidate<S> {
    fn seed_block(&self) -> BlockId {
        self.seed
    }

    fn members(&self) -> Vec<BlockId> {
        self.blocks.clone()
    }
}

impl BlockSet for Kernel {
    fn seed_block(&self) -> BlockId {
        self.seed
    }

    fn members(&self) -> Vec<BlockId> {
        self.blocks.iter().copied().collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Kernel {
    /// 1-based, in descending execution count of the seed block.
    pub id: usize,
    pub seed: BlockId,
    pub blocks: BTreeSet<BlockId>,
    #[serde(default)]
    pub parents: BTreeSet<usize>,
    #[serde(default)]
    pub children: BTreeSet<usize>,
}

impl Kernel {
    pub fn contains(&self, b: BlockId) -> bool {
        self.blocks.contains(&b)
    }

    pub fn is_top_level(&self) -> bool {
        self.parents.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Rejection {
    pub candidate: usize,
    pub seed: BlockId,
    pub missing: Vec<BlockId>,
}

impl std::fmt::Display for Rejection {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "candidate {} (seed {}) names blocks absent from the trace: {:?}",
            self.candidate,
            self.seed,
            self.missing.iter().map(|b| b.0).collect::<Vec<_>>()
        )
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Legalized {
    pub kernels: Vec<Kernel>,
    pub rejected: Vec<Rejection>,
}

/// `inner` looks like a loop nested in `outer`: they overlap, and every
/// block of `inner` runs at least twice as often as any block `outer` has
/// outside `inner`. Strict containment is the degenerate case.
fn nested_in(inner: &BTreeSet<BlockId>, outer: &BTreeSet<BlockId>, counts: &[u64]) -> bool {
    if inner.is_disjoint(outer) || outer.is_subset(inner) {
        return false;
    }
    if inner.is_subset(outer) {
        return true;
    }
    let count = |b: &BlockId| counts.get(b.index()).copied().unwrap_or(0);
    let coldest_inner = inner.iter().map(count).min().unwrap_or(0);
    let hottest_rest = outer.difference(inner).map(count).max().unwrap_or(0);
    coldest_inner >= hottest_rest.saturating_mul(2)
}

/// `foreign[k][o]`: entering a block of candidate `o` means the stream has
/// left candidate `k`.
///
/// Partially overlapping candidates that are not nested are fragments of
/// one kernel; fragments and chains of fragments never clear each other.
/// A nested candidate never clears its host, while the host clears it.
/// Everything else (disjoint sets, the host seen from the nested side) is
/// foreign.
fn foreign_matrix(sets: &[BTreeSet<BlockId>], counts: &[u64]) -> Vec<Vec<bool>> {
    let n = sets.len();
    let nested: Vec<Vec<bool>> = (0..n)
        .map(|i| (0..n).map(|j| i != j && nested_in(&sets[i], &sets[j], counts)).collect())
        .collect();
    let mut component: Vec<usize> = (0..n).collect();
    fn root(c: &mut [usize], mut i: usize) -> usize {
        while c[i] != i {
            c[i] = c[c[i]];
            i = c[i];
        }
        i
    }
    for i in 0..n {
        for j in i + 1..n {
            let fragments = !sets[i].is_disjoint(&sets[j])
                && !sets[i].is_subset(&sets[j])
                && !sets[j].is_subset(&sets[i])
                && !nested[i][j]
                && !nested[j][i];
            if fragments {
                let (ri, rj) = (root(&mut component, i), root(&mut component, j));
                component[ri] = rj;
            }
        }
    }
    let roots: Vec<usize> = (0..n).map(|i| root(&mut component, i)).collect();
    (0..n)
        .map(|k| {
            (0..n)
                .map(|o| {
                    if k == o || nested[o][k] {
                        false
                    } else {
                        nested[k][o] || roots[k] != roots[o]
                    }
                })
                .collect()
        })
        .collect()
}

/// One streaming pass of the pending/clear rule against fixed `sets`.
fn replay(trace: &Trace, sets: &[BTreeSet<BlockId>], counts: &[u64]) -> Vec<BTreeSet<BlockId>> {
    let n = sets.len();
    let width = trace.block_count() as usize;
    let foreign = foreign_matrix(sets, counts);
    let mut owners: Vec<Vec<usize>> = vec![Vec::new(); width];
    let mut member: Vec<Vec<bool>> = vec![vec![false; width]; n];
    for (k, set) in sets.iter().enumerate() {
        for b in set {
            owners[b.index()].push(k);
            member[k][b.index()] = true;
        }
    }
    let mut grown = sets.to_vec();
    let mut pending: Vec<BTreeSet<BlockId>> = vec![BTreeSet::new(); n];
    // Collecting since the last visit; off before the first visit and
    // after the stream has moved into a foreign candidate.
    let mut inside = vec![false; n];

    for b in trace.blocks() {
        let bi = b.index();
        for k in 0..n {
            if member[k][bi] {
                for p in std::mem::take(&mut pending[k]) {
                    member[k][p.index()] = true;
                    grown[k].insert(p);
                }
                inside[k] = true;
            } else if inside[k] {
                if owners[bi].iter().any(|&o| foreign[k][o]) {
                    pending[k].clear();
                    inside[k] = false;
                } else {
                    pending[k].insert(b);
                }
            }
        }
    }
    grown
}

pub fn legalize<C: BlockSet>(trace: &Trace, candidates: &[C]) -> Legalized {
    let counts = trace.block_counts();
    let present = |b: BlockId| counts.get(b.index()).is_some_and(|&c| c > 0);

    let mut rejected = Vec::new();
    let mut seeds = Vec::new();
    let mut raw: Vec<BTreeSet<BlockId>> = Vec::new();
    for (i, c) in candidates.iter().enumerate() {
        let members: BTreeSet<BlockId> = c.members().into_iter().collect();
        let missing: Vec<BlockId> = members.iter().copied().filter(|&b| !present(b)).collect();
        if missing.is_empty() && !members.is_empty() {
            seeds.push(c.seed_block());
            raw.push(members);
        } else {
            rejected.push(Rejection {
                candidate: i,
                seed: c.seed_block(),
                missing,
            });
        }
    }

    let n = raw.len();
    let width = trace.block_count() as usize;
    let mut sets = raw;
    loop {
        let grown = replay(trace, &sets, &counts);
        if grown == sets {
            break;
        }
        sets = grown;
    }
    let member: Vec<Vec<bool>> = sets
        .iter()
        .map(|set| {
            let mut m = vec![false; width];
            for b in set {
                m[b.index()] = true;
            }
            m
        })
        .collect();

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        counts[seeds[b].index()]
            .cmp(&counts[seeds[a].index()])
            .then(seeds[a].cmp(&seeds[b]))
            .then(a.cmp(&b))
    });
    let mut by_set: BTreeMap<BTreeSet<BlockId>, usize> = BTreeMap::new();
    let mut kernels: Vec<Kernel> = Vec::new();
    for k in order {
        let blocks: BTreeSet<BlockId> = (0..width)
            .filter(|&i| member[k][i])
            .map(|i| BlockId(i as u32))
            .collect();
        if by_set.contains_key(&blocks) {
            continue;
        }
        let id = kernels.len() + 1;
        by_set.insert(blocks.clone(), id);
        kernels.push(Kernel {
            id,
            seed: seeds[k],
            blocks,
            parents: BTreeSet::new(),
            children: BTreeSet::new(),
        });
    }
    hierarchy(&mut kernels);
    Legalized { kernels, rejected }
}

/// Links `a` under `b` when `a ⊂ b` strictly with no kernel strictly between.
pub fn hierarchy(kernels: &mut [Kernel]) {
    let n = kernels.len();
    let strict = |a: &Kernel, b: &Kernel| a.blocks.len() < b.blocks.len() && a.blocks.is_subset(&b.blocks);
    let mut links = Vec::new();
    for a in 0..n {
        for b in 0..n {
            if a == b || !strict(&kernels[a], &kernels[b]) {
                continue;
            }
            let between = (0..n).any(|c| {
                c != a && c != b && strict(&kernels[a], &kernels[c]) && strict(&kernels[c], &kernels[b])
            });
            if !between {
                links.push((kernels[a].id, kernels[b].id, a, b));
            }
        }
    }
    for k in kernels.iter_mut() {
        k.parents.clear();
        k.children.clear();
    }
    for (child_id, parent_id, a, b) in links {
        kernels[a].parents.insert(parent_id);
        kernels[b].children.insert(child_id);
    }
}

/// Block entries that fall inside at least one kernel, as an exact count.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Coverage {
    pub covered: u64,
    pub total: u64,
}

impl Coverage {
    /// Ratio in `[0, 1]`; an empty trace counts as zero.
    pub fn ratio<S: Score>(&self) -> S {
        if self.total == 0 {
            S::zero()
        } else {
            S::from_count(self.covered) / S::from_count(self.total)
        }
    }

    pub fn as_f64(&self) -> f64 {
        self.ratio::<f64>()
    }
}

pub fn coverage(trace: &Trace, kernels: &[Kernel]) -> Coverage {
    let mut inside = vec![false; trace.block_count() as usize];
    for k in kernels {
        for b in &k.blocks {
            if let Some(slot) = inside.get_mut(b.index()) {
                *slot = true;
            }
        }
    }
    let mut cov = Coverage { covered: 0, total: 0 };
    for b in trace.blocks() {
        cov.total += 1;
        if inside[b.index()] {
            cov.covered += 1;
        }
    }
    cov
}

/// Share of block entries that fall in each kernel, indexed like `kernels`.
pub fn coverage_contributions(trace: &Trace, kernels: &[Kernel]) -> Vec<Coverage> {
    let counts = trace.block_counts();
    let total: u64 = counts.iter().sum();
    kernels
        .iter()
        .map(|k| Coverage {
            covered: k.blocks.iter().map(|b| counts.get(b.index()).copied().unwrap_or(0)).sum(),
            total,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::TraceEvent;

    fn trace(seq: &[u32], blocks: u32) -> Trace {
        Trace::new(
            seq.iter().map(|&b| TraceEvent::BlockEnter(BlockId(b))).collect(),
            blocks,
        )
        .unwrap()
    }

    fn cand(seed: u32, blocks: &[u32]) -> KernelCandidate<f64> {
        KernelCandidate {
            seed: BlockId(seed),
            blocks: blocks.iter().map(|&b| BlockId(b)).collect(),
            score: 1.0,
        }
    }

    fn set(ids: &[u32]) -> BTreeSet<BlockId> {
        ids.iter().map(|&b| BlockId(b)).collect()
    }

    #[test]
    fn rare_arm_joins_kernel() {
        // 0 1 2 [3] 0 1 2 ...: block 3 only ever occurs between visits.
        let mut seq = Vec::new();
        for i in 0..50 {
            seq.extend([0, 1, 2]);
            if i % 10 == 0 {
                seq.push(3);
            }
        }
        let t = trace(&seq, 4);
        let l = legalize(&t, &[cand(0, &[0, 1, 2])]);
        assert_eq!(l.kernels.len(), 1);
        assert_eq!(l.kernels[0].blocks, set(&[0, 1, 2, 3]));
    }

    #[test]
    fn overlapping_fragments_fuse() {
        let seq: Vec<u32> = (0..5).cycle().take(100).collect();
        let t = trace(&seq, 5);
        let l = legalize(&t, &[cand(1, &[0, 1, 2]), cand(3, &[2, 3, 4])]);
        assert_eq!(l.kernels.len(), 1);
        assert_eq!(l.kernels[0].blocks, set(&[0, 1, 2, 3, 4]));
    }

    #[test]
    fn disjoint_kernels_do_not_leak() {
        let mut seq = vec![9];
        for _ in 0..20 {
            seq.extend([0, 1, 2]);
        }
        seq.push(8);
        for _ in 0..20 {
            seq.extend([3, 4, 5]);
        }
        let t = trace(&seq, 10);
        let l = legalize(&t, &[cand(0, &[0, 1, 2]), cand(3, &[3, 4, 5])]);
        assert_eq!(l.kernels.len(), 2);
        assert_eq!(l.kernels[0].blocks, set(&[0, 1, 2]));
        assert_eq!(l.kernels[1].blocks, set(&[3, 4, 5]));
        assert!(l.kernels.iter().all(|k| k.parents.is_empty()));
    }

    #[test]
    fn hot_partial_overlap_nests_instead_of_fusing() {
        // 0 [1 2 3 x8] 4: the outer piece {4, 0, 1} straddles the inner loop.
        let mut seq = Vec::new();
        for _ in 0..30 {
            seq.push(0);
            for _ in 0..8 {
                seq.extend([1, 2, 3]);
            }
            seq.push(4);
        }
        let t = trace(&seq, 5);
        let l = legalize(&t, &[cand(2, &[1, 2, 3]), cand(0, &[4, 0, 1])]);
        assert_eq!(l.kernels.len(), 2);
        assert_eq!(l.kernels[0].blocks, set(&[1, 2, 3]));
        assert_eq!(l.kernels[1].blocks, set(&[0, 1, 2, 3, 4]));
        assert_eq!(l.kernels[0].parents, BTreeSet::from([2]));
    }

    #[test]
    fn nested_kernel_survives() {
        // outer: 0 [inner 1 2 x4] 3
        let mut seq = Vec::new();
        for _ in 0..30 {
            seq.push(0);
            for _ in 0..4 {
                seq.extend([1, 2]);
            }
            seq.push(3);
        }
        let t = trace(&seq, 4);
        let l = legalize(&t, &[cand(1, &[1, 2]), cand(0, &[0, 1, 2, 3])]);
        assert_eq!(l.kernels.len(), 2);
        let inner = l.kernels.iter().find(|k| k.blocks.len() == 2).unwrap();
        let outer = l.kernels.iter().find(|k| k.blocks.len() == 4).unwrap();
        assert_eq!(inner.parents, BTreeSet::from([outer.id]));
        assert_eq!(outer.children, BTreeSet::from([inner.id]));
    }

    #[test]
    fn absent_block_rejects_candidate() {
        let t = trace(&[0, 1, 0, 1], 3);
        let l = legalize(&t, &[cand(0, &[0, 2])]);
        assert!(l.kernels.is_empty());
        assert_eq!(l.rejected.len(), 1);
        assert_eq!(l.rejected[0].missing, vec![BlockId(2)]);
    }

    #[test]
    fn hierarchy_is_transitively_reduced() {
        let mk = |id, b: &[u32]| Kernel {
            id,
            seed: BlockId(b[0]),
            blocks: set(b),
            parents: BTreeSet::new(),
            children: BTreeSet::new(),
        };
        let mut ks = vec![mk(0, &[1]), mk(1, &[1, 2]), mk(2, &[1, 2, 3]), mk(3, &[7])];
        hierarchy(&mut ks);
        assert_eq!(ks[0].parents, BTreeSet::from([1]));
        assert_eq!(ks[1].parents, BTreeSet::from([2]));
        assert!(ks[2].parents.is_empty());
        assert_eq!(ks[2].children, BTreeSet::from([1]));
        assert!(ks[3].parents.is_empty() && ks[3].children.is_empty());
    }

    #[test]
    fn coverage_counts_entries() {
        let t = trace(&[0, 1, 1, 2], 3);
        assert_eq!(coverage(&t, &[]).as_f64(), 0.0);
        let k = Kernel {
            id: 0,
            seed: BlockId(1),
            blocks: set(&[1]),
            parents: BTreeSet::new(),
            children: BTreeSet::new(),
        };
        assert_eq!(coverage(&t, std::slice::from_ref(&k)), Coverage { covered: 2, total: 4 });
        assert_eq!(coverage(&Trace::empty(3), &[k]).as_f64(), 0.0);
    }
}
