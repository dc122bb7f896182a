//! Reference programs with labelled kernels.
//!
//! Each program comes with the analysis parameters it is meant to be run
//! with; the hot gate is scaled to the program's iteration counts.

use super::{Arm, CfgProgram, Edge, MemOp, ProgramBuilder};
use crate::trace::BlockId;

pub const FOR_LOOP_BOUND: u64 = 511;
pub const RECURSION_DEPTH: u64 = 512;
pub const NESTED_OUTER: u64 = 32;
pub const NESTED_INNER: u64 = 32;
pub const RARE_ITERATIONS: u64 = 10_000;
pub const RARE_P: f64 = 0.01;
pub const WIDE_ITERATIONS: u64 = 600;
pub const PIPELINE_ITERATIONS: u64 = 20;
pub const FSM_STEPS: u64 = 64;
pub const FSM_HANDLER: u64 = 64;
pub const PHASED_OUTER: u64 = 128;
pub const PHASED_INNER: u64 = 4;
pub const SCATTERED_ITERATIONS: u64 = 300;
/// Blocks in one trip around the scattered loop, header included.
pub const SCATTERED_STAGES: usize = 9;

/// Analysis parameters a program is designed for.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Recommended {
    pub radius: usize,
    pub threshold: f64,
    pub hot_count: u64,
}

impl Recommended {
    const fn new(radius: usize, threshold: f64, hot_count: u64) -> Self {
        Self {
            radius,
            threshold,
            hot_count,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Canonical {
    pub program: CfgProgram,
    pub seed: u64,
    pub recommended: Recommended,
}

pub const DEFAULT_SEED: u64 = 42;

/// Names of [`canonical_programs`] in order.
pub const CANONICAL_NAMES: [&str; 9] = [
    "for_loop",
    "recursion",
    "nested_loop",
    "rare_conditional",
    "wide_kernel",
    "pipeline2",
    "fsm",
    "phased_loop",
    "scattered_loop",
];

pub fn canonical_programs() -> Vec<Canonical> {
    CANONICAL_NAMES
        .iter()
        .map(|n| canonical_program(n).expect("known name"))
        .collect()
}

pub fn canonical_program(name: &str) -> Option<Canonical> {
    let (program, recommended) = match name {
        "for_loop" => (for_loop(FOR_LOOP_BOUND), Recommended::new(7, 0.95, 256)),
        "recursion" => (recursion(RECURSION_DEPTH), Recommended::new(7, 0.95, 256)),
        "nested_loop" => (nested_loop(NESTED_OUTER, NESTED_INNER), Recommended::new(7, 0.95, 32)),
        "rare_conditional" => (
            rare_conditional(RARE_P, RARE_ITERATIONS),
            Recommended::new(7, 0.95, 512),
        ),
        "wide_kernel" => (wide_kernel(WIDE_ITERATIONS), Recommended::new(7, 0.95, 512)),
        "pipeline2" => (pipeline2(PIPELINE_ITERATIONS), Recommended::new(2, 0.9, 16)),
        "fsm" => (fsm(FSM_STEPS, FSM_HANDLER), Recommended::new(7, 0.95, 32)),
        "phased_loop" => (
            phased_loop(PHASED_OUTER, PHASED_INNER),
            Recommended::new(7, 0.95, 256),
        ),
        "scattered_loop" => (
            scattered_loop(SCATTERED_ITERATIONS),
            Recommended::new(7, 0.95, 256),
        ),
        _ => return None,
    };
    Some(Canonical {
        program,
        seed: DEFAULT_SEED,
        recommended,
    })
}

const A: u64 = 0x1_0000;
const B: u64 = 0x2_0000;
const C: u64 = 0x3_0000;
const D: u64 = 0x4_0000;

fn counted(bound: u64, body: BlockId, exit: Option<BlockId>) -> Edge {
    Edge::Loop { bound, body, exit }
}

/// `init; for i in 0..n { b[i] = a[i] + a[i+1] }`
pub fn for_loop(n: u64) -> CfgProgram {
    let mut p = ProgramBuilder::new("for_loop");
    let init = p.block("init");
    let cond = p.block("cond");
    let body = p.block("body");
    let inc = p.block("inc");
    p.goto(init, cond)
        .edge(cond, counted(n, body, None))
        .mem(body, MemOp::load(A, 4).indexed(cond, 4))
        .mem(body, MemOp::load(A + 4, 4).indexed(cond, 4))
        .mem(body, MemOp::store(B, 4).indexed(cond, 4))
        .goto(body, inc)
        .goto(inc, cond);
    p.truth("loop", &[cond, body, inc], body, n, None);
    p.build().expect("valid")
}

/// Self-call chain that stops when the depth counter reaches `depth`.
pub fn recursion(depth: u64) -> CfgProgram {
    let mut p = ProgramBuilder::new("recursion");
    let entry = p.block("entry");
    let body = p.block("body");
    let cond = p.block("cond");
    let call = p.block("call");
    p.goto(entry, body)
        .mem(body, MemOp::store(C, 8).indexed(cond, 8))
        .goto(body, cond)
        .mem(cond, MemOp::load(C, 8).indexed(cond, 8))
        .edge(cond, Edge::Recurse { depth, call, exit: None })
        .goto(call, body);
    p.truth("recursion", &[body, cond, call], body, depth, None);
    p.build().expect("valid")
}

/// `for o in 0..outer { for i in 0..inner { y[i] += x[o][i] } }`
pub fn nested_loop(outer: u64, inner: u64) -> CfgProgram {
    let mut p = ProgramBuilder::new("nested_loop");
    let o_init = p.block("o_init");
    let o_cond = p.block("o_cond");
    let o_body = p.block("o_body");
    let i_cond = p.block("i_cond");
    let i_body = p.block("i_body");
    let i_inc = p.block("i_inc");
    let o_inc = p.block("o_inc");
    p.goto(o_init, o_cond)
        .edge(o_cond, counted(outer, o_body, None))
        .goto(o_body, i_cond)
        .edge(i_cond, counted(inner, i_body, Some(o_inc)))
        .mem(i_body, MemOp::load(A, 4).indexed(o_cond, 4 * inner as i64).indexed(i_cond, 4))
        .mem(i_body, MemOp::load(B, 4).indexed(i_cond, 4))
        .mem(i_body, MemOp::store(B, 4).indexed(i_cond, 4))
        .goto(i_body, i_inc)
        .goto(i_inc, i_cond)
        .goto(o_inc, o_cond);
    let outer_k = p.truth(
        "outer",
        &[o_cond, o_body, i_cond, i_body, i_inc, o_inc],
        o_body,
        outer,
        None,
    );
    p.truth("inner", &[i_cond, i_body, i_inc], i_body, outer * inner, Some(outer_k));
    p.build().expect("valid")
}

/// Loop whose body takes a rare arm with probability `p_rare`.
pub fn rare_conditional(p_rare: f64, n: u64) -> CfgProgram {
    let mut p = ProgramBuilder::new("rare_conditional");
    let init = p.block("init");
    let cond = p.block("cond");
    let body = p.block("body");
    let common = p.block("common");
    let rare = p.block("rare");
    let inc = p.block("inc");
    p.goto(init, cond)
        .edge(cond, counted(n, body, None))
        .mem(body, MemOp::load(A, 8).indexed(cond, 8))
        .edge(
            body,
            Edge::Branch {
                arms: vec![
                    Arm { target: common, p: 1.0 - p_rare },
                    Arm { target: rare, p: p_rare },
                ],
            },
        )
        .mem(common, MemOp::store(B, 8).indexed(cond, 8))
        .goto(common, inc)
        .mem(rare, MemOp::store(C, 8))
        .goto(rare, inc)
        .goto(inc, cond);
    p.truth("loop", &[cond, body, common, rare, inc], body, n, None);
    p.build().expect("valid")
}

/// Five straight-line stages inside one loop, each consuming the previous
/// stage's temporary.
pub fn wide_kernel(n: u64) -> CfgProgram {
    let mut p = ProgramBuilder::new("wide_kernel");
    let init = p.block("init");
    let cond = p.block("cond");
    let stages: Vec<BlockId> = (1..=5).map(|k| p.block(format!("b{k}"))).collect();
    let inc = p.block("inc");
    p.goto(init, cond).edge(cond, counted(n, stages[0], None));
    p.mem(stages[0], MemOp::load(A, 4).indexed(cond, 4));
    for (k, pair) in stages.windows(2).enumerate() {
        let tmp = D + 8 * k as u64;
        p.mem(pair[0], MemOp::store(tmp, 4))
            .mem(pair[1], MemOp::load(tmp, 4))
            .goto(pair[0], pair[1]);
    }
    p.mem(stages[4], MemOp::store(B, 4).indexed(cond, 4))
        .goto(stages[4], inc)
        .goto(inc, cond);
    let mut blocks = vec![cond, inc];
    blocks.extend(&stages);
    p.truth("loop", &blocks, stages[0], n, None);
    p.build().expect("valid")
}

/// Producer loop filling `A[0..n]`, then a consumer loop reading it into `B`.
pub fn pipeline2(n: u64) -> CfgProgram {
    let mut p = ProgramBuilder::new("pipeline2");
    let c1 = p.block("c1");
    let b1 = p.block("b1");
    let i1 = p.block("i1");
    let c2 = p.block("c2");
    let b2 = p.block("b2");
    let i2 = p.block("i2");
    p.edge(c1, counted(n, b1, Some(c2)))
        .mem(b1, MemOp::store(A, 8).indexed(c1, 8))
        .goto(b1, i1)
        .goto(i1, c1)
        .edge(c2, counted(n, b2, None))
        .mem(b2, MemOp::load(A, 8).indexed(c2, 8))
        .mem(b2, MemOp::store(B, 8).indexed(c2, 8))
        .goto(b2, i2)
        .goto(i2, c2);
    p.truth("producer", &[c1, b1, i1], b1, n, None);
    p.truth("consumer", &[c2, b2, i2], b2, n, None);
    p.build().expect("valid")
}

/// State controller: each step reads input, updates the state, picks one of
/// two setups and runs a handler loop whose result it commits.
pub fn fsm(steps: u64, handler: u64) -> CfgProgram {
    const INPUT: u64 = 0x6_0000;
    const STATE: u64 = 0x6_8000;
    const CONFIG: u64 = 0x6_8100;
    const RESULT: u64 = 0x6_8200;
    const BUF: u64 = 0x7_0000;
    let mut p = ProgramBuilder::new("fsm");
    let init = p.block("ctl_init");
    let cond = p.block("ctl_cond");
    let next = p.block("ctl_next");
    let dispatch = p.block("ctl_dispatch");
    let setup_a = p.block("setup_a");
    let setup_b = p.block("setup_b");
    let h_cond = p.block("h_cond");
    let h_body = p.block("h_body");
    let h_inc = p.block("h_inc");
    let commit = p.block("ctl_commit");
    p.mem(init, MemOp::store(STATE, 8))
        .goto(init, cond)
        .edge(cond, counted(steps, next, None))
        .mem(next, MemOp::load(INPUT, 8).indexed(cond, 8))
        .mem(next, MemOp::load(STATE, 8))
        .mem(next, MemOp::store(STATE, 8))
        .goto(next, dispatch)
        .edge(
            dispatch,
            Edge::Branch {
                arms: vec![Arm { target: setup_a, p: 0.5 }, Arm { target: setup_b, p: 0.5 }],
            },
        )
        .mem(setup_a, MemOp::store(CONFIG, 8))
        .goto(setup_a, h_cond)
        .mem(setup_b, MemOp::store(CONFIG, 8))
        .goto(setup_b, h_cond)
        .edge(h_cond, counted(handler, h_body, Some(commit)))
        .mem(h_body, MemOp::load(CONFIG, 8))
        .mem(h_body, MemOp::load(BUF, 8).indexed(h_cond, 8))
        .mem(h_body, MemOp::store(BUF, 8).indexed(h_cond, 8))
        .mem(h_body, MemOp::store(RESULT, 8))
        .goto(h_body, h_inc)
        .goto(h_inc, h_cond)
        .mem(commit, MemOp::load(RESULT, 8))
        .mem(commit, MemOp::store(STATE, 8))
        .goto(commit, cond);
    let ctl = p.truth(
        "controller",
        &[cond, next, dispatch, setup_a, setup_b, h_cond, h_body, h_inc, commit],
        next,
        steps,
        None,
    );
    p.truth("handler", &[h_cond, h_body, h_inc], h_body, steps * handler, Some(ctl));
    p.build().expect("valid")
}

/// Outer loop whose body runs two short inner loops back to back: a map
/// phase and a reduce phase joined by one block.
pub fn phased_loop(outer: u64, inner: u64) -> CfgProgram {
    let mut p = ProgramBuilder::new("phased_loop");
    let init = p.block("init");
    let o_cond = p.block("o_cond");
    let a_cond = p.block("a_cond");
    let a_body = p.block("a_body");
    let a_inc = p.block("a_inc");
    let join = p.block("join");
    let b_cond = p.block("b_cond");
    let b_body = p.block("b_body");
    let b_inc = p.block("b_inc");
    let o_inc = p.block("o_inc");
    p.goto(init, o_cond)
        .edge(o_cond, counted(outer, a_cond, None))
        .edge(a_cond, counted(inner, a_body, Some(join)))
        .mem(a_body, MemOp::load(A, 4).indexed(o_cond, 4 * inner as i64).indexed(a_cond, 4))
        .mem(a_body, MemOp::store(B, 4).indexed(a_cond, 4))
        .goto(a_body, a_inc)
        .goto(a_inc, a_cond)
        .goto(join, b_cond)
        .edge(b_cond, counted(inner, b_body, Some(o_inc)))
        .mem(b_body, MemOp::load(B, 4).indexed(b_cond, 4))
        .mem(b_body, MemOp::store(C, 4).indexed(o_cond, 4))
        .goto(b_body, b_inc)
        .goto(b_inc, b_cond)
        .goto(o_inc, o_cond);
    p.truth(
        "outer",
        &[o_cond, a_cond, a_body, a_inc, join, b_cond, b_body, b_inc, o_inc],
        o_inc,
        outer,
        None,
    );
    p.build().expect("valid")
}

/// Straight-line loop body whose blocks are numbered out of layout order:
/// the header first, then every third stage, then the rest. Block ids drive
/// seed order among equally hot blocks, so narrow windows see several
/// disjoint pieces of one loop.
pub fn scattered_loop(n: u64) -> CfgProgram {
    let mut p = ProgramBuilder::new("scattered_loop");
    let init = p.block("init");
    let mut slots: Vec<Option<BlockId>> = vec![None; SCATTERED_STAGES];
    let order = (0..SCATTERED_STAGES)
        .step_by(3)
        .chain((0..SCATTERED_STAGES).filter(|i| i % 3 != 0));
    for pos in order {
        let name = if pos == 0 { "cond".to_string() } else { format!("s{pos}") };
        slots[pos] = Some(p.block(name));
    }
    let ring: Vec<BlockId> = slots.into_iter().map(|b| b.expect("filled")).collect();
    let cond = ring[0];
    p.goto(init, cond).edge(cond, counted(n, ring[1], None));
    for pair in ring[1..].windows(2) {
        p.goto(pair[0], pair[1]);
    }
    p.mem(ring[4], MemOp::load(A, 8).indexed(cond, 8))
        .mem(ring[8], MemOp::store(B, 8).indexed(cond, 8))
        .goto(ring[SCATTERED_STAGES - 1], cond);
    p.truth("loop", &ring, ring[4], n, None);
    p.build().expect("valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::run;

    #[test]
    fn every_canonical_program_runs() {
        for c in canonical_programs() {
            let t = run(&c.program, c.seed).unwrap();
            assert!(!t.is_empty(), "{}", c.program.name);
            assert!(t.has_addresses());
        }
        assert!(canonical_program("nope").is_none());
    }

    #[test]
    fn for_loop_shape() {
        let t = run(&for_loop(511), 0).unwrap();
        assert_eq!(t.block_entries(), 1 + 511 * 3 + 1);
        let seq = t.block_sequence();
        assert_eq!(seq[0], BlockId(0));
        assert_eq!(&seq[1..4], &[BlockId(1), BlockId(2), BlockId(3)]);
        assert_eq!(*seq.last().unwrap(), BlockId(1));
    }

    #[test]
    fn recursion_shape() {
        let t = run(&recursion(512), 0).unwrap();
        assert_eq!(t.block_counts(), vec![1, 512, 512, 511]);
        assert_eq!(*t.block_sequence().last().unwrap(), BlockId(2));
    }

    #[test]
    fn counted_truth_matches_anchor_counts() {
        for c in canonical_programs() {
            let t = run(&c.program, c.seed).unwrap();
            let counts = t.block_counts();
            for k in &c.program.truth {
                assert_eq!(
                    counts[k.anchor.index()],
                    k.expected_iterations,
                    "{} / {}",
                    c.program.name,
                    k.name
                );
            }
        }
    }

    #[test]
    fn pipeline_consumer_reads_every_produced_slot() {
        let t = run(&pipeline2(20), 0).unwrap();
        let mut stores = Vec::new();
        let mut loads = Vec::new();
        for e in t.events() {
            match e {
                crate::trace::TraceEvent::Store(a) if a.value < B => stores.push(a.value),
                crate::trace::TraceEvent::Load(a) => loads.push(a.value),
                _ => {}
            }
        }
        assert_eq!(stores.len(), 20);
        assert_eq!(stores, loads);
    }
}
