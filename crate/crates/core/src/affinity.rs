//! Windowed basic-block affinity.
//!
//! One pass over the block sequence keeps only the last `2r + 1` block ids.
//! Whenever the window is full, its center is credited once against every
//! window slot (itself included). After the pass each row is normalized by
//! `occurrences(A) * (2r + 1)`, so a block whose every occurrence sat in a
//! full window has a row summing to exactly one. The first and last `r`
//! positions of the trace are never centers; blocks seen there end up with
//! row mass below one.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fmt::Write as _;

use crate::scalar::Score;
use crate::trace::{BlockId, Trace};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AffinityError {
    #[error("block {0} never occurs in the trace")]
    UnknownBlock(BlockId),
    #[error("radius must be at least 1")]
    ZeroRadius,
}

/// Sizes of the streaming tables; depends on the program and the radius,
/// never on trace length.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Footprint {
    pub pair_entries: usize,
    pub occurrence_entries: usize,
    pub window_capacity: usize,
}

#[derive(Clone, Debug)]
pub struct AffinityState {
    radius: usize,
    window: VecDeque<BlockId>,
    pair_counts: HashMap<(BlockId, BlockId), u64>,
    occurrences: HashMap<BlockId, u64>,
    full_windows: u64,
}

impl AffinityState {
    pub fn new(radius: usize) -> Result<Self, AffinityError> {
        if radius == 0 {
            return Err(AffinityError::ZeroRadius);
        }
        Ok(Self {
            radius,
            window: VecDeque::with_capacity(2 * radius + 1),
            pair_counts: HashMap::new(),
            occurrences: HashMap::new(),
            full_windows: 0,
        })
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn window_width(&self) -> usize {
        2 * self.radius + 1
    }

    pub fn accumulate(&mut self, block: BlockId) {
        let width = self.window_width();
        if self.window.len() == width {
            self.window.pop_front();
        }
        self.window.push_back(block);
        let occ = self.occurrences.entry(block).or_insert(0);
        *occ = occ.saturating_add(1);
        if self.window.len() == width {
            let center = self.window[self.radius];
            for &other in &self.window {
                let c = self.pair_counts.entry((center, other)).or_insert(0);
                *c = c.saturating_add(1);
            }
            self.full_windows += 1;
        }
    }

    pub fn extend<I: IntoIterator<Item = BlockId>>(&mut self, blocks: I) {
        for b in blocks {
            self.accumulate(b);
        }
    }

    pub fn pair_count(&self, center: BlockId, neighbor: BlockId) -> u64 {
        self.pair_counts
            .get(&(center, neighbor))
            .copied()
            .unwrap_or(0)
    }

    pub fn pair_counts(&self) -> &HashMap<(BlockId, BlockId), u64> {
        &self.pair_counts
    }

    pub fn occurrences(&self, block: BlockId) -> u64 {
        self.occurrences.get(&block).copied().unwrap_or(0)
    }

    pub fn window(&self) -> impl Iterator<Item = BlockId> + '_ {
        self.window.iter().copied()
    }

    pub fn full_windows(&self) -> u64 {
        self.full_windows
    }

    pub fn footprint(&self) -> Footprint {
        Footprint {
            pair_entries: self.pair_counts.len(),
            occurrence_entries: self.occurrences.len(),
            window_capacity: self.window_width(),
        }
    }

    pub fn finalize<S: Score>(self) -> AffinityMatrix<S> {
        let denom_width = self.window_width() as u64;
        let mut rows: BTreeMap<BlockId, Vec<(BlockId, S)>> = BTreeMap::new();
        let mut scores = HashMap::with_capacity(self.pair_counts.len());
        for (&(a, b), &count) in &self.pair_counts {
            let occ = self.occurrences[&a];
            let f = S::from_count(count) / S::from_count(occ.saturating_mul(denom_width));
            scores.insert((a, b), f);
            rows.entry(a).or_default().push((b, f));
        }
        for row in rows.values_mut() {
            row.sort_by_key(|&(b, _)| b);
        }
        AffinityMatrix {
            radius: self.radius,
            scores,
            rows,
            occurrences: self.occurrences.into_iter().collect(),
        }
    }
}

/// Normalized scores `f(A, B)`: the share of the windows centered on `A`
/// that hold `B`.
#[derive(Clone, Debug)]
pub struct AffinityMatrix<S: Score> {
    radius: usize,
    scores: HashMap<(BlockId, BlockId), S>,
    rows: BTreeMap<BlockId, Vec<(BlockId, S)>>,
    occurrences: BTreeMap<BlockId, u64>,
}

impl<S: Score> AffinityMatrix<S> {
    /// Single streaming pass over the trace's block entries.
    pub fn from_trace(trace: &Trace, radius: usize) -> Result<Self, AffinityError> {
        let mut state = AffinityState::new(radius)?;
        state.extend(trace.blocks());
        Ok(state.finalize())
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    /// True when no window was ever full.
    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn contains(&self, block: BlockId) -> bool {
        self.occurrences.contains_key(&block)
    }

    pub fn occurrences(&self, block: BlockId) -> u64 {
        self.occurrences.get(&block).copied().unwrap_or(0)
    }

    /// Blocks with their execution counts, ascending by id.
    pub fn occurrence_counts(&self) -> impl Iterator<Item = (BlockId, u64)> + '_ {
        self.occurrences.iter().map(|(&b, &c)| (b, c))
    }

    /// `f(a, b)`, zero for unseen pairs.
    pub fn f(&self, a: BlockId, b: BlockId) -> S {
        self.scores.get(&(a, b)).copied().unwrap_or_else(S::zero)
    }

    /// Nonzero entries of row `a`, ascending by column id.
    pub fn row(&self, a: BlockId) -> &[(BlockId, S)] {
        self.rows.get(&a).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn row_mass(&self, a: BlockId) -> S {
        self.row(a).iter().fold(S::zero(), |acc, &(_, f)| acc + f)
    }

    /// Symmetrized edge weight, the larger of the two directions.
    pub fn sym(&self, a: BlockId, b: BlockId) -> Result<S, AffinityError> {
        for x in [a, b] {
            if !self.contains(x) {
                return Err(AffinityError::UnknownBlock(x));
            }
        }
        Ok(self.f(a, b).max(self.f(b, a)))
    }

    /// `A,B,f` rows sorted by `(A, B)`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("A,B,f\n");
        for (a, row) in &self.rows {
            for (b, f) in row {
                let _ = writeln!(out, "{},{},{}", a.0, b.0, f);
            }
        }
        out
    }
}
