//! Seeded generator of structured random programs (sequences, counted
//! loops, recursion chains and two-way branches nested a few levels deep).

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

use super::{run_with, Arm, CfgProgram, Edge, MemOp, ProgramBuilder, RunOptions};
use crate::trace::BlockId;

/// Upper bound on the events a generated program emits under its seed.
pub const MAX_RANDOM_EVENTS: u64 = 10_000;
const MAX_DEPTH: usize = 3;
const ARRAY_BASES: [u64; 4] = [0x1_0000, 0x1_0400, 0x2_0000, 0x3_0000];
const WIDTHS: [u32; 4] = [1, 2, 4, 8];

struct Gen {
    b: ProgramBuilder,
    rng: Xoshiro256PlusPlus,
    headers: Vec<BlockId>,
}

impl Gen {
    fn mem(&mut self, blk: BlockId) {
        let ops = self.rng.gen_range(0..=2);
        for _ in 0..ops {
            let base = ARRAY_BASES[self.rng.gen_range(0..ARRAY_BASES.len())];
            let size = WIDTHS[self.rng.gen_range(0..WIDTHS.len())];
            let mut op = if self.rng.gen_bool(0.5) {
                MemOp::load(base, size)
            } else {
                MemOp::store(base, size)
            };
            for h in self.headers.clone() {
                if self.rng.gen_bool(0.5) {
                    op = op.indexed(h, self.rng.gen_range(0..=16));
                }
            }
            self.b.mem(blk, op);
        }
    }

    fn region(&mut self, depth: usize, next: BlockId) -> BlockId {
        let mut cur = next;
        for _ in 0..self.rng.gen_range(1..=3) {
            cur = self.stmt(depth, cur);
        }
        cur
    }

    fn stmt(&mut self, depth: usize, next: BlockId) -> BlockId {
        let kind = if depth >= MAX_DEPTH { 0 } else { self.rng.gen_range(0..4) };
        match kind {
            1 => {
                let header = self.b.block(format!("loop{}", self.b.len()));
                let latch = self.b.block(format!("latch{}", self.b.len()));
                self.b.goto(latch, header);
                self.mem(latch);
                self.headers.push(header);
                let body = self.region(depth + 1, latch);
                self.headers.pop();
                let bound = self.rng.gen_range(1..=12);
                self.b.edge(header, Edge::Loop { bound, body, exit: Some(next) });
                header
            }
            2 => {
                let cond = self.b.block(format!("rec{}", self.b.len()));
                self.headers.push(cond);
                let body = self.region(depth + 1, cond);
                self.headers.pop();
                let depth_bound = self.rng.gen_range(1..=8);
                self.b.edge(
                    cond,
                    Edge::Recurse {
                        depth: depth_bound,
                        call: body,
                        exit: Some(next),
                    },
                );
                self.mem(cond);
                body
            }
            3 => {
                let cond = self.b.block(format!("br{}", self.b.len()));
                self.mem(cond);
                let then = self.region(depth + 1, next);
                let other = self.region(depth + 1, next);
                let p = self.rng.gen_range(0.05..0.95);
                self.b.edge(
                    cond,
                    Edge::Branch {
                        arms: vec![Arm { target: then, p }, Arm { target: other, p: 1.0 - p }],
                    },
                );
                cond
            }
            _ => {
                let blk = self.b.block(format!("bb{}", self.b.len()));
                self.mem(blk);
                self.b.goto(blk, next);
                blk
            }
        }
    }
}

/// A random program whose run under `seed` emits at most
/// [`MAX_RANDOM_EVENTS`] events. Candidates that overshoot are discarded and
/// regenerated from the same stream, so the result is a pure function of
/// `seed`.
pub fn random_program(seed: u64) -> CfgProgram {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed ^ 0x6b61_746c_6173);
    loop {
        let mut g = Gen {
            b: ProgramBuilder::new(format!("random-{seed}")),
            rng: rng.clone(),
            headers: Vec::new(),
        };
        let exit = g.b.block("exit");
        let entry = g.region(0, exit);
        g.b.entry(entry);
        rng = g.rng;
        let program = g.b.build().expect("structured programs are valid");
        let opts = RunOptions {
            seed,
            log_addresses: true,
            max_events: MAX_RANDOM_EVENTS,
        };
        if run_with(&program, &opts).is_ok() {
            return program;
        }
    }
}
