//! Source→target path enumeration over DDG edges.

use super::NodeSet;
use crate::cpg::{CodePropertyGraph, Layer, NodeId};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeSet, HashSet, VecDeque};

/// Hard cap on partial paths explored by one call.
pub const MAX_EXPANSIONS: usize = 500_000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionPath {
    pub nodes: Vec<NodeId>,
    pub lines: BTreeSet<u32>,
}

impl ExecutionPath {
    pub fn new(nodes: Vec<NodeId>, g: &CodePropertyGraph) -> Self {
        let lines = nodes.iter().map(|&n| g.node(n).line_number).collect();
        ExecutionPath { nodes, lines }
    }

    pub fn source(&self) -> NodeId {
        self.nodes[0]
    }

    pub fn sink(&self) -> NodeId {
        *self.nodes.last().expect("paths are non-empty")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FlowSet {
    pub paths: Vec<ExecutionPath>,
    /// Set when a path, length or expansion limit cut the enumeration short.
    pub truncated: bool,
}

impl FlowSet {
    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    /// Union of all node ids on any path.
    pub fn node_ids(&self) -> BTreeSet<NodeId> {
        self.paths.iter().flat_map(|p| p.nodes.iter().copied()).collect()
    }

    pub fn lines(&self) -> BTreeSet<u32> {
        self.paths.iter().flat_map(|p| p.lines.iter().copied()).collect()
    }
}

/// Simple DDG paths from any source to any target, shortest first; ties in
/// lexicographic node-id order.
pub fn reachable_by_flows(
    targets: &NodeSet,
    sources: &NodeSet,
    g: &CodePropertyGraph,
    max_len: usize,
    max_paths: usize,
) -> FlowSet {
    let max_len = max_len.max(1);
    let max_paths = max_paths.max(1);
    let mut out = FlowSet::default();
    if targets.is_empty() || sources.is_empty() {
        return out;
    }
    // Only nodes that can still reach a target are worth extending into.
    let mut useful: HashSet<NodeId> = targets.members.iter().copied().collect();
    let mut stack: Vec<NodeId> = targets.members.clone();
    while let Some(n) = stack.pop() {
        for p in g.predecessors(n, Layer::Ddg) {
            if useful.insert(p) {
                stack.push(p);
            }
        }
    }
    let succ = |n: NodeId| {
        let mut s: Vec<NodeId> = g.successors(n, Layer::Ddg).filter(|m| useful.contains(m)).collect();
        s.sort_unstable();
        s.dedup();
        s
    };
    let mut queue: VecDeque<Vec<NodeId>> =
        sources.members.iter().filter(|s| useful.contains(s)).map(|&s| vec![s]).collect();
    let mut expansions = 0usize;
    while let Some(path) = queue.pop_front() {
        let last = *path.last().expect("non-empty");
        if targets.contains(last) {
            if out.paths.len() == max_paths {
                out.truncated = true;
                break;
            }
            out.paths.push(ExecutionPath::new(path.clone(), g));
        }
        let next: Vec<NodeId> = succ(last).into_iter().filter(|m| !path.contains(m)).collect();
        if next.is_empty() {
            continue;
        }
        if path.len() >= max_len {
            out.truncated = true;
            continue;
        }
        for m in next {
            expansions += 1;
            if expansions > MAX_EXPANSIONS {
                out.truncated = true;
                return out;
            }
            let mut p = path.clone();
            p.push(m);
            queue.push_back(p);
        }
    }
    out
}
