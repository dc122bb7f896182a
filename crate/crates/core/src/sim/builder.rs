use super::{BlockSpec, CfgProgram, Edge, GroundTruthKernel, MemOp, SimError, PROGRAM_VERSION};
use crate::trace::BlockId;

/// Incremental program construction. Blocks get ids in creation order and
/// halt until an edge is set.
#[derive(Clone, Debug, Default)]
pub struct ProgramBuilder {
    name: String,
    blocks: Vec<BlockSpec>,
    truth: Vec<GroundTruthKernel>,
    entry: Option<BlockId>,
}

impl ProgramBuilder {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            ..Self::default()
        }
    }

    pub fn block(&mut self, name: impl Into<String>) -> BlockId {
        let id = BlockId(self.blocks.len() as u32);
        self.blocks.push(BlockSpec {
            name: name.into(),
            mem: Vec::new(),
            edge: Edge::Halt,
        });
        id
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn edge(&mut self, b: BlockId, edge: Edge) -> &mut Self {
        self.blocks[b.index()].edge = edge;
        self
    }

    pub fn goto(&mut self, from: BlockId, to: BlockId) -> &mut Self {
        self.edge(from, Edge::Goto { target: to })
    }

    pub fn mem(&mut self, b: BlockId, op: MemOp) -> &mut Self {
        self.blocks[b.index()].mem.push(op);
        self
    }

    pub fn entry(&mut self, b: BlockId) -> &mut Self {
        self.entry = Some(b);
        self
    }

    /// Adds a ground-truth kernel and returns its index for `parent` links.
    pub fn truth(
        &mut self,
        name: impl Into<String>,
        blocks: &[BlockId],
        anchor: BlockId,
        expected_iterations: u64,
        parent: Option<usize>,
    ) -> usize {
        let mut blocks = blocks.to_vec();
        blocks.sort();
        self.truth.push(GroundTruthKernel {
            name: name.into(),
            blocks,
            anchor,
            expected_iterations,
            parent,
        });
        self.truth.len() - 1
    }

    pub fn build(self) -> Result<CfgProgram, SimError> {
        let p = CfgProgram {
            version: PROGRAM_VERSION,
            name: self.name,
            entry: self.entry.unwrap_or(BlockId(0)),
            blocks: self.blocks,
            truth: self.truth,
        };
        p.validate()?;
        Ok(p)
    }
}
