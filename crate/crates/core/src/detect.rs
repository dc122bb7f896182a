//! Greedy seed-and-grow kernel detection over an affinity matrix.
//!
//! Blocks are visited by descending execution count (ties: ascending id).
//! The walk stops at the first block below `hot_count`; blocks already in an
//! emitted candidate are skipped. Each remaining seed grows a candidate until
//! its score reaches `threshold`.
//!
//! Two growth rules are available:
//!
//! * [`Growth::SeedRow`] (default) walks the seed's own affinity row in
//!   descending order and scores the set by the seed's in-set row mass. With a
//!   narrow window this yields the overlapping fragments of wide kernels that
//!   legalization later fuses, and it leaves rarely taken arms out of the raw
//!   candidate.
//! * [`Growth::MinMass`] adds the non-member with the largest summed
//!   symmetrized affinity to the set and scores by [`set_score`], the weakest
//!   member's in-set mass.

use std::collections::HashSet;

use crate::affinity::{AffinityError, AffinityMatrix};
use crate::scalar::Score;
use crate::trace::BlockId;

pub const DEFAULT_THRESHOLD: f64 = 0.95;
pub const DEFAULT_HOT_COUNT: u64 = 512;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DetectError {
    #[error("threshold {0} must lie in (0, 1]")]
    Threshold(f64),
    #[error("hot count must be at least 1")]
    HotCount,
    #[error("cannot score an empty block set")]
    EmptySet,
    #[error(transparent)]
    Affinity(#[from] AffinityError),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Growth {
    #[default]
    SeedRow,
    MinMass,
}

impl std::str::FromStr for Growth {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "seed-row" => Ok(Growth::SeedRow),
            "min-mass" => Ok(Growth::MinMass),
            other => Err(format!("unknown growth rule '{other}'")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DetectParams<S: Score> {
    pub threshold: S,
    pub hot_count: u64,
    pub growth: Growth,
}

impl<S: Score> Default for DetectParams<S> {
    fn default() -> Self {
        Self {
            threshold: S::lit(DEFAULT_THRESHOLD),
            hot_count: DEFAULT_HOT_COUNT,
            growth: Growth::SeedRow,
        }
    }
}

impl<S: Score> DetectParams<S> {
    pub fn new(threshold: S, hot_count: u64) -> Result<Self, DetectError> {
        let p = Self {
            threshold,
            hot_count,
            growth: Growth::SeedRow,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_growth(mut self, growth: Growth) -> Self {
        self.growth = growth;
        self
    }

    pub fn validate(&self) -> Result<(), DetectError> {
        if !(self.threshold > S::zero() && self.threshold <= S::one()) {
            return Err(DetectError::Threshold(self.threshold.to_f64_lossy()));
        }
        if self.hot_count == 0 {
            return Err(DetectError::HotCount);
        }
        Ok(())
    }
}

/// A raw greedy block set. `blocks` keeps insertion order, seed first.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelCandidate<S: Score> {
    pub seed: BlockId,
    pub blocks: Vec<BlockId>,
    pub score: S,
}

impl<S: Score> KernelCandidate<S> {
    pub fn contains(&self, b: BlockId) -> bool {
        self.blocks.contains(&b)
    }
}

/// Weakest member's in-set symmetrized mass:
/// `min_{A in set} sum_{B in set} sym(A, B)`.
pub fn set_score<S: Score>(matrix: &AffinityMatrix<S>, blocks: &[BlockId]) -> Result<S, DetectError> {
    if blocks.is_empty() {
        return Err(DetectError::EmptySet);
    }
    let mut min = S::infinity();
    for &a in blocks {
        let mut mass = S::zero();
        for &b in blocks {
            mass += matrix.sym(a, b)?;
        }
        min = min.min(mass);
    }
    Ok(min)
}

/// The seed's row mass restricted to `blocks`.
pub fn seed_mass<S: Score>(
    matrix: &AffinityMatrix<S>,
    seed: BlockId,
    blocks: &[BlockId],
) -> Result<S, DetectError> {
    if !matrix.contains(seed) {
        return Err(AffinityError::UnknownBlock(seed).into());
    }
    let mut mass = S::zero();
    for &b in blocks {
        if !matrix.contains(b) {
            return Err(AffinityError::UnknownBlock(b).into());
        }
        mass += matrix.f(seed, b);
    }
    Ok(mass)
}

/// Blocks in seeding order: execution count descending, id ascending.
pub fn seed_order<S: Score>(matrix: &AffinityMatrix<S>) -> Vec<(BlockId, u64)> {
    let mut order: Vec<_> = matrix.occurrence_counts().collect();
    order.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    order
}

pub fn detect<S: Score>(
    matrix: &AffinityMatrix<S>,
    params: &DetectParams<S>,
) -> Result<Vec<KernelCandidate<S>>, DetectError> {
    params.validate()?;
    let mut out = Vec::new();
    if matrix.is_empty() {
        return Ok(out);
    }
    let mut explained: HashSet<BlockId> = HashSet::new();
    for (seed, count) in seed_order(matrix) {
        if count < params.hot_count {
            break;
        }
        if explained.contains(&seed) {
            continue;
        }
        let grown = match params.growth {
            Growth::SeedRow => grow_seed_row(matrix, seed, params.threshold),
            Growth::MinMass => grow_min_mass(matrix, seed, params.threshold)?,
        };
        match grown {
            Some(c) => {
                explained.extend(c.blocks.iter().copied());
                out.push(c);
            }
            // Isolated hot block: never reaches the threshold.
            None => {
                explained.insert(seed);
            }
        }
    }
    Ok(out)
}

fn grow_seed_row<S: Score>(
    matrix: &AffinityMatrix<S>,
    seed: BlockId,
    threshold: S,
) -> Option<KernelCandidate<S>> {
    let mut row: Vec<(BlockId, S)> = matrix
        .row(seed)
        .iter()
        .copied()
        .filter(|&(b, f)| b != seed && f > S::zero())
        .collect();
    row.sort_by(|a, b| b.1.partial_cmp(&a.1).expect("finite scores").then(a.0.cmp(&b.0)));
    let mut blocks = vec![seed];
    let mut score = matrix.f(seed, seed);
    let mut next = row.into_iter();
    while score < threshold {
        let (b, f) = next.next()?;
        blocks.push(b);
        score += f;
    }
    Some(KernelCandidate {
        seed,
        blocks,
        score,
    })
}

fn grow_min_mass<S: Score>(
    matrix: &AffinityMatrix<S>,
    seed: BlockId,
    threshold: S,
) -> Result<Option<KernelCandidate<S>>, DetectError> {
    let universe: Vec<BlockId> = matrix.occurrence_counts().map(|(b, _)| b).collect();
    let mut member: HashSet<BlockId> = HashSet::from([seed]);
    let mut blocks = vec![seed];
    // gain[i] = sum over members A of sym(A, universe[i])
    let mut gain: Vec<S> = universe
        .iter()
        .map(|&c| matrix.sym(seed, c))
        .collect::<Result<_, _>>()?;
    let mut score = set_score(matrix, &blocks)?;
    while score < threshold {
        let mut best: Option<(usize, S)> = None;
        for (i, &c) in universe.iter().enumerate() {
            if member.contains(&c) || gain[i] <= S::zero() {
                continue;
            }
            // Strict comparison keeps the lowest id on ties.
            if best.is_none_or(|(_, g)| gain[i] > g) {
                best = Some((i, gain[i]));
            }
        }
        let Some((i, _)) = best else {
            return Ok(None);
        };
        let added = universe[i];
        member.insert(added);
        blocks.push(added);
        for (j, &c) in universe.iter().enumerate() {
            gain[j] += matrix.sym(added, c)?;
        }
        score = set_score(matrix, &blocks)?;
    }
    Ok(Some(KernelCandidate {
        seed,
        blocks,
        score,
    }))
}
