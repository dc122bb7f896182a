//! Control-flow-graph simulator.
//!
//! A program is a dense list of blocks. Each block carries the memory
//! accesses it performs on entry and one successor rule. Loop and recursion
//! headers own a counter whose current value is the index that address
//! expressions refer to. Branches draw from a seeded xoshiro256++ stream, so
//! a `(program, seed)` pair always produces the same trace.

mod builder;
pub mod canonical;
pub mod random;

use std::collections::HashSet;

use rand::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

pub use builder::ProgramBuilder;
pub use canonical::{canonical_program, canonical_programs, Canonical, Recommended};
pub use random::random_program;

use crate::trace::{Address, BlockId, Trace, TraceEvent};

pub const PROGRAM_VERSION: u32 = 1;
pub const DEFAULT_MAX_EVENTS: u64 = 50_000_000;
const PROBABILITY_SLACK: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccessKind {
    Load,
    Store,
}

/// `stride * index(header)` contribution to an address.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IndexTerm {
    pub header: BlockId,
    pub stride: i64,
}

/// Affine access `base + Σ stride·index(header)` of `size` bytes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemOp {
    pub kind: AccessKind,
    pub base: u64,
    pub size: u32,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub terms: Vec<IndexTerm>,
}

impl MemOp {
    pub fn load(base: u64, size: u32) -> Self {
        Self {
            kind: AccessKind::Load,
            base,
            size,
            terms: Vec::new(),
        }
    }

    pub fn store(base: u64, size: u32) -> Self {
        Self {
            kind: AccessKind::Store,
            ..Self::load(base, size)
        }
    }

    pub fn indexed(mut self, header: BlockId, stride: i64) -> Self {
        self.terms.push(IndexTerm { header, stride });
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Arm {
    pub target: BlockId,
    pub p: f64,
}

/// Successor rule. A missing `exit` ends the run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Edge {
    Goto {
        target: BlockId,
    },
    /// Counted loop header: takes `body` `bound` times, then `exit`.
    Loop {
        bound: u64,
        body: BlockId,
        #[serde(default)]
        exit: Option<BlockId>,
    },
    /// Recursion test: the header runs `depth` times, descending through
    /// `call` on all but the last.
    Recurse {
        depth: u64,
        call: BlockId,
        #[serde(default)]
        exit: Option<BlockId>,
    },
    Branch {
        arms: Vec<Arm>,
    },
    Halt,
}

impl Edge {
    fn successors(&self) -> Vec<Option<BlockId>> {
        match self {
            Edge::Goto { target } => vec![Some(*target)],
            Edge::Loop { body, exit, .. } => vec![Some(*body), *exit],
            Edge::Recurse { call, exit, .. } => vec![Some(*call), *exit],
            Edge::Branch { arms } => arms.iter().map(|a| Some(a.target)).collect(),
            Edge::Halt => vec![None],
        }
    }

    fn is_counted(&self) -> bool {
        matches!(self, Edge::Loop { .. } | Edge::Recurse { .. })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockSpec {
    #[serde(default)]
    pub name: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub mem: Vec<MemOp>,
    pub edge: Edge,
}

/// Labelled kernel the program is built to contain. `anchor` runs exactly
/// once per iteration, so its block count equals `expected_iterations`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundTruthKernel {
    pub name: String,
    pub blocks: Vec<BlockId>,
    pub anchor: BlockId,
    pub expected_iterations: u64,
    #[serde(default)]
    pub parent: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CfgProgram {
    pub version: u32,
    pub name: String,
    pub entry: BlockId,
    pub blocks: Vec<BlockSpec>,
    #[serde(default)]
    pub truth: Vec<GroundTruthKernel>,
}

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("invalid program: {0}")]
    Invalid(String),
    #[error("program JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("event cap of {cap} reached in block {block} ({name}); the program may not terminate")]
    EventCap { cap: u64, block: BlockId, name: String },
    #[error("address of access {op} in block {block} leaves the 64-bit space")]
    AddressOverflow { block: BlockId, op: usize },
}

fn invalid(msg: impl Into<String>) -> SimError {
    SimError::Invalid(msg.into())
}

impl CfgProgram {
    pub fn block_count(&self) -> u32 {
        self.blocks.len() as u32
    }

    pub fn block_name(&self, b: BlockId) -> &str {
        self.blocks.get(b.index()).map_or("?", |s| s.name.as_str())
    }

    pub fn from_json(text: &str) -> Result<Self, SimError> {
        let p: CfgProgram = serde_json::from_str(text)?;
        p.validate()?;
        Ok(p)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("program serializes")
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.version != PROGRAM_VERSION {
            return Err(invalid(format!(
                "version {} unsupported (expected {PROGRAM_VERSION})",
                self.version
            )));
        }
        let n = self.blocks.len();
        if n == 0 {
            return Err(invalid("no blocks"));
        }
        if n > u32::MAX as usize {
            return Err(invalid("too many blocks"));
        }
        let in_range = |b: BlockId| b.index() < n;
        if !in_range(self.entry) {
            return Err(invalid(format!("entry {} out of range", self.entry)));
        }
        for (i, spec) in self.blocks.iter().enumerate() {
            for s in spec.edge.successors().into_iter().flatten() {
                if !in_range(s) {
                    return Err(invalid(format!("block {i} targets missing block {s}")));
                }
            }
            match &spec.edge {
                Edge::Recurse { depth: 0, .. } => {
                    return Err(invalid(format!("block {i}: recursion depth must be ≥ 1")))
                }
                Edge::Branch { arms } => {
                    if arms.is_empty() {
                        return Err(invalid(format!("block {i}: branch without arms")));
                    }
                    if arms.iter().any(|a| !(a.p >= 0.0 && a.p <= 1.0)) {
                        return Err(invalid(format!("block {i}: arm probability outside [0, 1]")));
                    }
                    let total: f64 = arms.iter().map(|a| a.p).sum();
                    if (total - 1.0).abs() > PROBABILITY_SLACK {
                        return Err(invalid(format!("block {i}: arm probabilities sum to {total}")));
                    }
                }
                _ => {}
            }
            for (j, op) in spec.mem.iter().enumerate() {
                if op.size == 0 {
                    return Err(invalid(format!("block {i} access {j}: zero width")));
                }
                for t in &op.terms {
                    if !in_range(t.header) || !self.blocks[t.header.index()].edge.is_counted() {
                        return Err(invalid(format!(
                            "block {i} access {j}: index header {} is not a loop or recursion block",
                            t.header
                        )));
                    }
                }
            }
        }
        self.check_goto_cycles()?;
        self.check_termination()?;
        self.check_truth()
    }

    /// A cycle made only of `Goto` edges can never exit.
    fn check_goto_cycles(&self) -> Result<(), SimError> {
        let n = self.blocks.len();
        // 0 = unvisited, 1 = on current chain, 2 = known to escape
        let mut state = vec![0u8; n];
        for start in 0..n {
            let mut chain = Vec::new();
            let mut cur = start;
            loop {
                match state[cur] {
                    2 => break,
                    1 => return Err(invalid(format!("unconditional cycle through block {cur}"))),
                    _ => {}
                }
                state[cur] = 1;
                chain.push(cur);
                match self.blocks[cur].edge {
                    Edge::Goto { target } => cur = target.index(),
                    _ => break,
                }
            }
            for c in chain {
                state[c] = 2;
            }
        }
        Ok(())
    }

    /// Every block reachable from the entry must be able to reach an exit.
    fn check_termination(&self) -> Result<(), SimError> {
        let n = self.blocks.len();
        let mut reach = vec![false; n];
        let mut stack = vec![self.entry.index()];
        while let Some(b) = stack.pop() {
            if std::mem::replace(&mut reach[b], true) {
                continue;
            }
            stack.extend(self.blocks[b].edge.successors().into_iter().flatten().map(BlockId::index));
        }
        let mut exits = vec![false; n];
        let mut changed = true;
        while changed {
            changed = false;
            for b in 0..n {
                if exits[b] {
                    continue;
                }
                let succ = self.blocks[b].edge.successors();
                let live = match &self.blocks[b].edge {
                    // Zero-probability arms do not count as escape routes.
                    Edge::Branch { arms } => arms
                        .iter()
                        .any(|a| a.p > 0.0 && exits[a.target.index()]),
                    _ => succ.iter().any(|s| s.is_none_or(|t| exits[t.index()])),
                };
                if live {
                    exits[b] = true;
                    changed = true;
                }
            }
        }
        if let Some(b) = (0..n).find(|&b| reach[b] && !exits[b]) {
            return Err(invalid(format!("block {b} cannot reach a terminal block")));
        }
        Ok(())
    }

    fn check_truth(&self) -> Result<(), SimError> {
        let n = self.blocks.len();
        let sets: Vec<HashSet<BlockId>> = self
            .truth
            .iter()
            .map(|t| t.blocks.iter().copied().collect())
            .collect();
        for (i, t) in self.truth.iter().enumerate() {
            if t.blocks.is_empty() || t.blocks.iter().any(|b| b.index() >= n) {
                return Err(invalid(format!("truth '{}': empty or out-of-range blocks", t.name)));
            }
            if !sets[i].contains(&t.anchor) {
                return Err(invalid(format!("truth '{}': anchor outside the kernel", t.name)));
            }
            if let Some(p) = t.parent {
                let ok = p < self.truth.len()
                    && p != i
                    && sets[i].is_subset(&sets[p])
                    && sets[i].len() < sets[p].len();
                if !ok {
                    return Err(invalid(format!(
                        "truth '{}': parent {p} does not strictly contain it",
                        t.name
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RunOptions {
    pub seed: u64,
    /// Emit loads and stores; without it only block entries are traced.
    pub log_addresses: bool,
    /// Abort once this many events have been emitted.
    pub max_events: u64,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            log_addresses: true,
            max_events: DEFAULT_MAX_EVENTS,
        }
    }
}

impl RunOptions {
    pub fn seeded(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }
}

/// Uniform draw in `[0, 1)` from the top 53 bits.
fn uniform(rng: &mut Xoshiro256PlusPlus) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Runs `program` with address logging and the default event cap.
pub fn run(program: &CfgProgram, seed: u64) -> Result<Trace, SimError> {
    run_with(program, &RunOptions::seeded(seed))
}

pub fn run_with(program: &CfgProgram, opts: &RunOptions) -> Result<Trace, SimError> {
    program.validate()?;
    let n = program.blocks.len();
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(opts.seed);
    let mut counter = vec![0u64; n];
    let mut index = vec![0u64; n];
    let mut events = Vec::new();
    let mut emitted = 0u64;
    let mut emit = |ev: TraceEvent, events: &mut Vec<TraceEvent>, at: BlockId| {
        if emitted >= opts.max_events {
            return Err(SimError::EventCap {
                cap: opts.max_events,
                block: at,
                name: program.block_name(at).to_owned(),
            });
        }
        emitted += 1;
        events.push(ev);
        Ok(())
    };

    let mut cur = Some(program.entry);
    while let Some(b) = cur {
        let spec = &program.blocks[b.index()];
        emit(TraceEvent::BlockEnter(b), &mut events, b)?;
        if opts.log_addresses {
            for (j, op) in spec.mem.iter().enumerate() {
                let mut addr = i128::from(op.base);
                for t in &op.terms {
                    addr += i128::from(t.stride) * i128::from(index[t.header.index()]);
                }
                let end = addr + i128::from(op.size);
                if addr < 0 || end > i128::from(u64::MAX) {
                    return Err(SimError::AddressOverflow { block: b, op: j });
                }
                let a = Address::new(addr as u64, op.size);
                let ev = match op.kind {
                    AccessKind::Load => TraceEvent::Load(a),
                    AccessKind::Store => TraceEvent::Store(a),
                };
                emit(ev, &mut events, b)?;
            }
        }
        let i = b.index();
        cur = match &spec.edge {
            Edge::Goto { target } => Some(*target),
            Edge::Loop { bound, body, exit } => {
                if counter[i] < *bound {
                    index[i] = counter[i];
                    counter[i] += 1;
                    Some(*body)
                } else {
                    counter[i] = 0;
                    *exit
                }
            }
            Edge::Recurse { depth, call, exit } => {
                if counter[i] + 1 < *depth {
                    counter[i] += 1;
                    index[i] = counter[i];
                    Some(*call)
                } else {
                    counter[i] = 0;
                    *exit
                }
            }
            Edge::Branch { arms } => {
                let u = uniform(&mut rng);
                let mut acc = 0.0;
                let mut pick = arms[arms.len() - 1].target;
                for a in arms {
                    acc += a.p;
                    if u < acc {
                        pick = a.target;
                        break;
                    }
                }
                Some(pick)
            }
            Edge::Halt => None,
        };
    }
    Ok(Trace::new(events, n as u32)
        .expect("simulator emits well-formed traces")
        .with_address_log(opts.log_addresses))
}
