//! In-memory trace vocabulary.
//!
//! A trace is a single interleaved stream: every `BlockEnter` is followed by
//! the loads and stores executed by that block, so memory events are always
//! attributed to the most recent block entry.

use std::fmt;

use serde::{Deserialize, Serialize};

/// Dense key of a static basic block, in `[0, block_count)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BlockId(pub u32);

impl BlockId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for BlockId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// A byte range `[value, value + size)` touched by one memory access.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Address {
    pub value: u64,
    pub size: u32,
}

impl Address {
    pub fn new(value: u64, size: u32) -> Self {
        Self { value, size }
    }

    /// Exclusive end of the accessed range.
    pub fn end(&self) -> u64 {
        self.value.saturating_add(u64::from(self.size))
    }

    pub fn overlaps(&self, other: &Address) -> bool {
        self.value < other.end() && other.value < self.end()
    }

    pub fn bytes(&self) -> impl Iterator<Item = u64> {
        self.value..self.end()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TraceEvent {
    BlockEnter(BlockId),
    Load(Address),
    Store(Address),
}

impl TraceEvent {
    pub fn block(&self) -> Option<BlockId> {
        match *self {
            TraceEvent::BlockEnter(b) => Some(b),
            _ => None,
        }
    }

    pub fn is_memory(&self) -> bool {
        !matches!(self, TraceEvent::BlockEnter(_))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TraceError {
    #[error("memory event at index {index} precedes any block entry")]
    OrphanMemoryEvent { index: usize },
    #[error("block {block} at index {index} is outside the program's {block_count} blocks")]
    BlockOutOfRange {
        index: usize,
        block: BlockId,
        block_count: u32,
    },
    #[error("zero-width memory access at index {index}")]
    ZeroWidthAccess { index: usize },
}

/// Checks the structural invariants of an event sequence.
pub fn validate(events: &[TraceEvent], block_count: u32) -> Result<(), TraceError> {
    let mut seen_block = false;
    for (index, ev) in events.iter().enumerate() {
        match *ev {
            TraceEvent::BlockEnter(block) => {
                if block.0 >= block_count {
                    return Err(TraceError::BlockOutOfRange {
                        index,
                        block,
                        block_count,
                    });
                }
                seen_block = true;
            }
            TraceEvent::Load(a) | TraceEvent::Store(a) => {
                if !seen_block {
                    return Err(TraceError::OrphanMemoryEvent { index });
                }
                if a.size == 0 {
                    return Err(TraceError::ZeroWidthAccess { index });
                }
            }
        }
    }
    Ok(())
}

/// Projects the block entries out of a raw event sequence.
pub fn block_sequence(events: &[TraceEvent]) -> Result<Vec<BlockId>, TraceError> {
    let mut out = Vec::new();
    for (index, ev) in events.iter().enumerate() {
        match ev {
            TraceEvent::BlockEnter(b) => out.push(*b),
            _ if out.is_empty() => return Err(TraceError::OrphanMemoryEvent { index }),
            _ => {}
        }
    }
    Ok(out)
}

/// A validated, immutable event sequence plus the size of the block key space.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Trace {
    events: Vec<TraceEvent>,
    block_count: u32,
    addresses: bool,
}

impl Trace {
    pub fn new(events: Vec<TraceEvent>, block_count: u32) -> Result<Self, TraceError> {
        validate(&events, block_count)?;
        let addresses = events.iter().any(TraceEvent::is_memory);
        Ok(Self {
            events,
            block_count,
            addresses,
        })
    }

    pub fn empty(block_count: u32) -> Self {
        Self {
            events: Vec::new(),
            block_count,
            addresses: false,
        }
    }

    /// Records whether memory events were logged at all. A trace that
    /// contains memory events is always address-logged.
    pub fn with_address_log(mut self, logged: bool) -> Self {
        self.addresses = logged || self.events.iter().any(TraceEvent::is_memory);
        self
    }

    pub fn events(&self) -> &[TraceEvent] {
        &self.events
    }

    pub fn block_count(&self) -> u32 {
        self.block_count
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Block entries in order, memory events dropped.
    pub fn blocks(&self) -> impl Iterator<Item = BlockId> + '_ {
        self.events.iter().filter_map(TraceEvent::block)
    }

    pub fn block_sequence(&self) -> Vec<BlockId> {
        self.blocks().collect()
    }

    pub fn block_entries(&self) -> usize {
        self.blocks().count()
    }

    /// True when loads and stores were logged, even if none occurred.
    pub fn has_addresses(&self) -> bool {
        self.addresses
    }

    /// Per-block execution counts, indexed by block id.
    pub fn block_counts(&self) -> Vec<u64> {
        let mut counts = vec![0u64; self.block_count as usize];
        for b in self.blocks() {
            counts[b.index()] += 1;
        }
        counts
    }

    /// The same trace with every memory event removed.
    pub fn without_addresses(&self) -> Trace {
        Trace {
            events: self
                .events
                .iter()
                .filter(|e| !e.is_memory())
                .copied()
                .collect(),
            block_count: self.block_count,
            addresses: false,
        }
    }

    pub fn into_events(self) -> Vec<TraceEvent> {
        self.events
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(i: u32) -> TraceEvent {
        TraceEvent::BlockEnter(BlockId(i))
    }

    #[test]
    fn projection_drops_memory_events() {
        let evs = vec![
            b(3),
            TraceEvent::Load(Address::new(0x10, 4)),
            b(4),
            TraceEvent::Store(Address::new(0x10, 4)),
        ];
        assert_eq!(block_sequence(&evs).unwrap(), vec![BlockId(3), BlockId(4)]);
        assert!(block_sequence(&[]).unwrap().is_empty());
    }

    #[test]
    fn orphan_memory_event_is_named() {
        let evs = vec![TraceEvent::Store(Address::new(0, 1)), b(0)];
        assert_eq!(
            block_sequence(&evs),
            Err(TraceError::OrphanMemoryEvent { index: 0 })
        );
        assert_eq!(
            Trace::new(evs, 1),
            Err(TraceError::OrphanMemoryEvent { index: 0 })
        );
    }

    #[test]
    fn rejects_out_of_range_blocks_and_zero_width() {
        assert!(matches!(
            Trace::new(vec![b(2)], 2),
            Err(TraceError::BlockOutOfRange { index: 0, .. })
        ));
        assert_eq!(
            Trace::new(vec![b(0), TraceEvent::Load(Address::new(8, 0))], 1),
            Err(TraceError::ZeroWidthAccess { index: 1 })
        );
    }

    #[test]
    fn address_overlap() {
        let a = Address::new(0x100, 8);
        assert!(a.overlaps(&Address::new(0x107, 1)));
        assert!(!a.overlaps(&Address::new(0x108, 4)));
        assert_eq!(a.bytes().count(), 8);
    }
}
