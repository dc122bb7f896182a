//! Kernel instances and store→load dependencies between them.
//!
//! An instance of kernel `K` is a maximal run of block entries whose blocks
//! all belong to `K`; the memory events that follow a block entry belong to
//! the same run. Nested kernels produce nested instances. Memory events are
//! attributed to the innermost active instance, or to the background actor
//! when no kernel is running. A byte-granular last-writer map then links
//! every load to the instance that stored each of its bytes.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::legalize::Kernel;
use crate::trace::{Trace, TraceEvent};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MemdepError {
    #[error("trace was recorded without addresses; producer/consumer analysis needs loads and stores")]
    NoAddresses,
    #[error("instance {instance} names kernel {kernel}, which is not in the kernel list")]
    UnknownKernel { instance: usize, kernel: usize },
}

/// One dynamic execution interval; `start..=end` are event indices.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KernelInstance {
    pub instance_id: usize,
    pub kernel: usize,
    pub start: usize,
    pub end: usize,
}

impl KernelInstance {
    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, index: usize) -> bool {
        self.start <= index && index <= self.end
    }
}

pub fn segment_instances(trace: &Trace, kernels: &[Kernel]) -> Vec<KernelInstance> {
    let width = trace.block_count() as usize;
    let mut out = Vec::new();
    for k in kernels {
        let mut member = vec![false; width];
        for b in &k.blocks {
            if let Some(m) = member.get_mut(b.index()) {
                *m = true;
            }
        }
        let mut open: Option<(usize, usize)> = None;
        for (i, ev) in trace.events().iter().enumerate() {
            match ev {
                TraceEvent::BlockEnter(b) if member[b.index()] => {
                    open = Some(match open {
                        Some((s, _)) => (s, i),
                        None => (i, i),
                    });
                }
                TraceEvent::BlockEnter(_) => {
                    if let Some((s, e)) = open.take() {
                        out.push((s, e, k.id));
                    }
                }
                _ => {
                    if let Some((_, e)) = open.as_mut() {
                        *e = i;
                    }
                }
            }
        }
        if let Some((s, e)) = open {
            out.push((s, e, k.id));
        }
    }
    // Outer instances before the inner ones they contain.
    out.sort_by(|a, b| a.0.cmp(&b.0).then(b.1.cmp(&a.1)).then(a.2.cmp(&b.2)));
    out.into_iter()
        .enumerate()
        .map(|(instance_id, (start, end, kernel))| KernelInstance {
            instance_id,
            kernel,
            start,
            end,
        })
        .collect()
}

/// Who performed a memory access.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Actor {
    Instance(usize),
    Background,
}

/// A load that read at least one byte last written by `producer`.
/// `store_index` is the latest such store; `bytes` counts the bytes it
/// took from that producer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dependency {
    pub producer: Actor,
    pub consumer: Actor,
    pub address: u64,
    pub bytes: u32,
    pub store_index: usize,
    pub load_index: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dependencies {
    pub records: Vec<Dependency>,
    /// Loads with at least one byte nobody stored before.
    pub external_loads: u64,
    pub external_bytes: u64,
    /// Distinct bytes held by the last-writer map at the end.
    pub tracked_bytes: usize,
}

/// Innermost active instance per event: shortest span, later start on ties.
struct ActiveSet<'a> {
    instances: &'a [KernelInstance],
    next: usize,
    active: Vec<usize>,
}

impl<'a> ActiveSet<'a> {
    fn new(instances: &'a [KernelInstance]) -> Self {
        Self {
            instances,
            next: 0,
            active: Vec::new(),
        }
    }

    fn at(&mut self, index: usize) -> Actor {
        while self.next < self.instances.len() && self.instances[self.next].start <= index {
            self.active.push(self.next);
            self.next += 1;
        }
        let inst = self.instances;
        self.active.retain(|&a| inst[a].end >= index);
        self.active
            .iter()
            .map(|&a| &inst[a])
            .min_by(|x, y| x.len().cmp(&y.len()).then(y.start.cmp(&x.start)))
            .map_or(Actor::Background, |i| Actor::Instance(i.instance_id))
    }
}

/// `instances` must come from [`segment_instances`] (sorted by start).
pub fn extract_dependencies(
    trace: &Trace,
    instances: &[KernelInstance],
) -> Result<Dependencies, MemdepError> {
    if !trace.has_addresses() {
        return Err(MemdepError::NoAddresses);
    }
    let sorted;
    let instances = if instances.windows(2).all(|w| w[0].start <= w[1].start) {
        instances
    } else {
        let mut v = instances.to_vec();
        v.sort_by(|a, b| a.start.cmp(&b.start).then(b.end.cmp(&a.end)));
        sorted = v;
        &sorted[..]
    };
    let mut active = ActiveSet::new(instances);
    let mut last_writer: HashMap<u64, (Actor, usize)> = HashMap::new();
    let mut deps = Dependencies::default();
    for (i, ev) in trace.events().iter().enumerate() {
        match ev {
            TraceEvent::BlockEnter(_) => {}
            TraceEvent::Store(a) => {
                let actor = active.at(i);
                for byte in a.bytes() {
                    last_writer.insert(byte, (actor, i));
                }
            }
            TraceEvent::Load(a) => {
                let actor = active.at(i);
                let mut per_writer: BTreeMap<Actor, (u32, usize)> = BTreeMap::new();
                let mut external = 0u64;
                for byte in a.bytes() {
                    match last_writer.get(&byte) {
                        Some(&(w, s)) => {
                            let e = per_writer.entry(w).or_insert((0, s));
                            e.0 += 1;
                            e.1 = e.1.max(s);
                        }
                        None => external += 1,
                    }
                }
                if external > 0 {
                    deps.external_loads += 1;
                    deps.external_bytes += external;
                }
                for (producer, (bytes, store_index)) in per_writer {
                    deps.records.push(Dependency {
                        producer,
                        consumer: actor,
                        address: a.value,
                        bytes,
                        store_index,
                        load_index: i,
                    });
                }
            }
        }
    }
    deps.tracked_bytes = last_writer.len();
    Ok(deps)
}

/// Graph node: a kernel or the background (non-kernel code).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Node {
    Kernel(usize),
    Background,
}

impl Node {
    pub fn label(&self) -> String {
        match self {
            Node::Kernel(k) => format!("K{k}"),
            Node::Background => "background".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineNode {
    pub node: Node,
    pub instances: usize,
    /// Event index where the node first runs; drives temporal coloring.
    pub first_event: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineEdge {
    pub producer: Node,
    pub consumer: Node,
    /// Distinct dependent load events.
    pub weight: u64,
    pub self_loop: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineGraph {
    pub nodes: Vec<PipelineNode>,
    pub edges: Vec<PipelineEdge>,
    pub external_loads: u64,
    pub rolled_up: bool,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct PipelineOptions {
    /// Attribute nested kernels to their top-level ancestors.
    pub roll_up: bool,
}

/// Smallest-id top-level ancestor of every kernel.
fn top_level(kernels: &[Kernel]) -> HashMap<usize, usize> {
    let by_id: HashMap<usize, &Kernel> = kernels.iter().map(|k| (k.id, k)).collect();
    let mut out = HashMap::new();
    for k in kernels {
        let mut roots = BTreeSet::new();
        let mut stack = vec![k.id];
        let mut seen = BTreeSet::new();
        while let Some(id) = stack.pop() {
            if !seen.insert(id) {
                continue;
            }
            match by_id.get(&id) {
                Some(n) if !n.parents.is_empty() => stack.extend(n.parents.iter().copied()),
                _ => {
                    roots.insert(id);
                }
            }
        }
        out.insert(k.id, roots.into_iter().next().unwrap_or(k.id));
    }
    out
}

pub fn build_pipeline(
    deps: &Dependencies,
    instances: &[KernelInstance],
    kernels: &[Kernel],
    options: PipelineOptions,
) -> Result<PipelineGraph, MemdepError> {
    let known: BTreeSet<usize> = kernels.iter().map(|k| k.id).collect();
    let roots = top_level(kernels);
    let map_kernel = |k: usize| if options.roll_up { roots[&k] } else { k };
    let mut kernel_of: HashMap<usize, usize> = HashMap::new();
    for inst in instances {
        if !known.contains(&inst.kernel) {
            return Err(MemdepError::UnknownKernel {
                instance: inst.instance_id,
                kernel: inst.kernel,
            });
        }
        kernel_of.insert(inst.instance_id, map_kernel(inst.kernel));
    }
    let node = |a: Actor| -> Result<Node, MemdepError> {
        match a {
            Actor::Background => Ok(Node::Background),
            Actor::Instance(i) => kernel_of
                .get(&i)
                .map(|&k| Node::Kernel(k))
                .ok_or(MemdepError::UnknownKernel { instance: i, kernel: usize::MAX }),
        }
    };

    let mut nodes: BTreeMap<Node, PipelineNode> = BTreeMap::new();
    for k in kernels {
        let n = Node::Kernel(map_kernel(k.id));
        nodes.entry(n).or_insert(PipelineNode {
            node: n,
            instances: 0,
            first_event: None,
        });
    }
    for inst in instances {
        let n = Node::Kernel(map_kernel(inst.kernel));
        let entry = nodes.get_mut(&n).expect("kernel node exists");
        entry.instances += 1;
        entry.first_event = Some(entry.first_event.map_or(inst.start, |f| f.min(inst.start)));
    }

    let mut loads: BTreeMap<(Node, Node), BTreeSet<usize>> = BTreeMap::new();
    for d in &deps.records {
        let (p, c) = (node(d.producer)?, node(d.consumer)?);
        loads.entry((p, c)).or_default().insert(d.load_index);
        for n in [p, c] {
            if n == Node::Background {
                nodes.entry(n).or_insert(PipelineNode {
                    node: n,
                    instances: 0,
                    first_event: None,
                });
            }
        }
    }
    let edges = loads
        .into_iter()
        .map(|((producer, consumer), l)| PipelineEdge {
            producer,
            consumer,
            weight: l.len() as u64,
            self_loop: producer == consumer,
        })
        .collect();
    Ok(PipelineGraph {
        nodes: nodes.into_values().collect(),
        edges,
        external_loads: deps.external_loads,
        rolled_up: options.roll_up,
    })
}

impl PipelineGraph {
    pub fn edge(&self, producer: Node, consumer: Node) -> Option<&PipelineEdge> {
        self.edges
            .iter()
            .find(|e| e.producer == producer && e.consumer == consumer)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("graph serializes")
    }

    /// Graphviz rendering. With `temporal`, kernels are filled from red
    /// (first to run) to green (last to run).
    pub fn to_dot(&self, temporal: bool) -> String {
        let mut order: Vec<&PipelineNode> = self
            .nodes
            .iter()
            .filter(|n| n.node != Node::Background)
            .collect();
        order.sort_by_key(|n| (n.first_event.unwrap_or(usize::MAX), n.node));
        let rank: HashMap<Node, usize> = order.iter().enumerate().map(|(i, n)| (n.node, i)).collect();
        let span = order.len().saturating_sub(1).max(1) as f64;

        let mut out = String::from("digraph pipeline {\n  rankdir=LR;\n");
        for n in &self.nodes {
            let label = n.node.label();
            match n.node {
                Node::Background => {
                    let _ = writeln!(out, "  {label} [label=\"{label}\", shape=box, style=dashed];");
                }
                Node::Kernel(_) if temporal => {
                    let t = rank[&n.node] as f64 / span;
                    let red = (255.0 * (1.0 - t)).round() as u8;
                    let green = (255.0 * t).round() as u8;
                    let _ = writeln!(
                        out,
                        "  {label} [label=\"{label}\", style=filled, fillcolor=\"#{red:02x}{green:02x}00\"];"
                    );
                }
                Node::Kernel(_) => {
                    let _ = writeln!(out, "  {label} [label=\"{label}\"];");
                }
            }
        }
        for e in &self.edges {
            let style = if e.self_loop { ", style=dashed" } else { "" };
            let _ = writeln!(
                out,
                "  {} -> {} [label=\"{}\"{style}];",
                e.producer.label(),
                e.consumer.label(),
                e.weight
            );
        }
        out.push_str("}\n");
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::{Address, BlockId};

    fn kernel(id: usize, blocks: &[u32]) -> Kernel {
        Kernel {
            id,
            seed: BlockId(blocks[0]),
            blocks: blocks.iter().map(|&b| BlockId(b)).collect(),
            parents: BTreeSet::new(),
            children: BTreeSet::new(),
        }
    }

    fn bb(b: u32) -> TraceEvent {
        TraceEvent::BlockEnter(BlockId(b))
    }

    fn st(a: u64, w: u32) -> TraceEvent {
        TraceEvent::Store(Address::new(a, w))
    }

    fn ld(a: u64, w: u32) -> TraceEvent {
        TraceEvent::Load(Address::new(a, w))
    }

    #[test]
    fn instances_are_maximal_runs() {
        let t = Trace::new(vec![bb(0), bb(1), st(0, 4), bb(1), bb(2), bb(1), ld(0, 4)], 3).unwrap();
        let inst = segment_instances(&t, &[kernel(0, &[1])]);
        let spans: Vec<(usize, usize)> = inst.iter().map(|i| (i.start, i.end)).collect();
        assert_eq!(spans, [(1, 3), (5, 6)]);
        assert!(segment_instances(&t, &[]).is_empty());
    }

    #[test]
    fn nested_instances_sit_inside_outer() {
        let seq = [0, 1, 2, 1, 2, 3, 0, 1, 2, 3];
        let t = Trace::new(seq.iter().map(|&b| bb(b)).collect(), 4).unwrap();
        let mut outer = kernel(1, &[0, 1, 2, 3]);
        let mut inner = kernel(0, &[1, 2]);
        outer.children.insert(0);
        inner.parents.insert(1);
        let inst = segment_instances(&t, &[inner, outer]);
        assert_eq!(inst.len(), 3);
        assert_eq!((inst[0].kernel, inst[0].start, inst[0].end), (1, 0, 9));
        assert!(inst[1..].iter().all(|i| i.kernel == 0 && inst[0].contains(i.start)));
    }

    #[test]
    fn store_then_load_links_instances() {
        let t = Trace::new(
            vec![bb(0), st(0x10, 8), bb(9), bb(1), ld(0x10, 4), ld(0x14, 4), ld(0x100, 4)],
            10,
        )
        .unwrap();
        let ks = [kernel(0, &[0]), kernel(1, &[1])];
        let inst = segment_instances(&t, &ks);
        let deps = extract_dependencies(&t, &inst).unwrap();
        assert_eq!(deps.records.len(), 2);
        assert_eq!(deps.external_loads, 1);
        assert_eq!(deps.tracked_bytes, 8);
        let g = build_pipeline(&deps, &inst, &ks, PipelineOptions::default()).unwrap();
        assert_eq!(g.edge(Node::Kernel(0), Node::Kernel(1)).unwrap().weight, 2);
        assert!(g.edge(Node::Kernel(1), Node::Kernel(0)).is_none());
        assert!(g.nodes.iter().all(|n| n.node != Node::Background));
    }

    #[test]
    fn partial_overlap_splits_by_writer() {
        let t = Trace::new(vec![bb(0), st(0, 4), bb(1), st(2, 4), bb(2), ld(0, 8)], 3).unwrap();
        let ks = [kernel(0, &[0]), kernel(1, &[1]), kernel(2, &[2])];
        let inst = segment_instances(&t, &ks);
        let deps = extract_dependencies(&t, &inst).unwrap();
        let mut bytes: Vec<(Actor, u32)> = deps.records.iter().map(|d| (d.producer, d.bytes)).collect();
        bytes.sort();
        assert_eq!(bytes, [(Actor::Instance(0), 2), (Actor::Instance(1), 4)]);
        assert_eq!(deps.external_bytes, 2);
    }

    #[test]
    fn background_and_self_loops() {
        let t = Trace::new(vec![bb(5), st(0, 1), bb(0), ld(0, 1), st(1, 1), bb(0), ld(1, 1)], 6).unwrap();
        let ks = [kernel(0, &[0])];
        let inst = segment_instances(&t, &ks);
        let deps = extract_dependencies(&t, &inst).unwrap();
        let g = build_pipeline(&deps, &inst, &ks, PipelineOptions::default()).unwrap();
        assert!(g.edge(Node::Background, Node::Kernel(0)).is_some());
        assert!(g.edge(Node::Kernel(0), Node::Kernel(0)).unwrap().self_loop);
        let dot = g.to_dot(true);
        assert!(dot.contains("background -> K0"));
        assert!(dot.contains("K0 -> K0 [label=\"1\", style=dashed]"));
    }

    #[test]
    fn no_addresses_is_an_error() {
        let t = Trace::new(vec![bb(0)], 1).unwrap();
        assert_eq!(extract_dependencies(&t, &[]), Err(MemdepError::NoAddresses));
        let logged = t.with_address_log(true);
        let deps = extract_dependencies(&logged, &[]).unwrap();
        assert!(deps.records.is_empty());
    }

    #[test]
    fn roll_up_maps_to_ancestor() {
        let t = Trace::new(vec![bb(0), bb(1), st(0, 4), bb(0), bb(2), ld(0, 4)], 3).unwrap();
        let mut outer = kernel(0, &[0, 1]);
        let mut inner = kernel(1, &[1]);
        outer.children.insert(1);
        inner.parents.insert(0);
        let reader = kernel(2, &[2]);
        let ks = [outer, inner, reader];
        let inst = segment_instances(&t, &ks);
        let deps = extract_dependencies(&t, &inst).unwrap();
        let flat = build_pipeline(&deps, &inst, &ks, PipelineOptions::default()).unwrap();
        assert!(flat.edge(Node::Kernel(1), Node::Kernel(2)).is_some());
        let up = build_pipeline(&deps, &inst, &ks, PipelineOptions { roll_up: true }).unwrap();
        assert!(up.edge(Node::Kernel(0), Node::Kernel(2)).is_some());
        assert_eq!(up.nodes.len(), 2);
    }
}
