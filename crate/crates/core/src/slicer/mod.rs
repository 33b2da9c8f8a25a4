//! Execution path → interacters → backward PDG closure → rendered snippet.

mod render;

pub use render::render_closure;

use crate::cpg::{CodePropertyGraph, Layer, NodeId, NodeKind};
use crate::frontend::{FrontendError, SourceUnit};
use crate::metrics::loc;
use crate::query::ExecutionPath;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeSet, HashMap};
use thiserror::Error;

/// Closure size bound; reaching it sets [`Slice::truncated`].
pub const MAX_CLOSURE: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SliceError {
    #[error("original unit has no lines of code")]
    DivisionGuard,
    #[error(transparent)]
    Frontend(#[from] FrontendError),
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct InteracterSet {
    pub members: Vec<NodeId>,
    pub path_lines: BTreeSet<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Slice {
    pub paths: Vec<ExecutionPath>,
    pub interacters: InteracterSet,
    pub closure: BTreeSet<NodeId>,
    pub truncated: bool,
    pub rendered_text: String,
    pub original_loc: u32,
    pub slice_loc: u32,
    pub reduction_pct: f64,
}

impl Slice {
    pub fn closure_lines(&self, g: &CodePropertyGraph) -> BTreeSet<u32> {
        self.closure.iter().map(|&n| g.node(n).line_number).collect()
    }
}

/// IDENTIFIER nodes on any of `lines`.
pub fn find_interacters_on(lines: &BTreeSet<u32>, g: &CodePropertyGraph) -> InteracterSet {
    InteracterSet {
        members: g
            .nodes()
            .iter()
            .filter(|n| n.kind == NodeKind::Identifier && lines.contains(&n.line_number))
            .map(|n| n.id)
            .collect(),
        path_lines: lines.clone(),
    }
}

pub fn find_interacters(path: &ExecutionPath, g: &CodePropertyGraph) -> InteracterSet {
    find_interacters_on(&path.lines, g)
}

fn is_jump(g: &CodePropertyGraph, n: NodeId) -> bool {
    let node = g.node(n);
    node.kind == NodeKind::ControlStructure
        && matches!(node.code.split_whitespace().next(), Some("goto" | "break" | "continue" | "return"))
}

/// Backward PDG closure of `targets`, with owning statements, governing
/// predicates, declarations of every named variable, and jumps guarded by
/// included predicates. Returns the closure and a truncation flag.
pub fn pdg_closure(targets: &BTreeSet<NodeId>, g: &CodePropertyGraph) -> (BTreeSet<NodeId>, bool) {
    let mut closure: BTreeSet<NodeId> = BTreeSet::new();
    let mut work: Vec<NodeId> = targets.iter().copied().collect();
    let mut truncated = false;
    let mut locals: HashMap<(Option<NodeId>, &str), Vec<NodeId>> = HashMap::new();
    for n in g.nodes() {
        if n.kind == NodeKind::Local {
            locals.entry((g.method_of(n.id), n.name())).or_default().push(n.id);
        }
    }
    let entries: BTreeSet<NodeId> = g.methods().iter().map(|m| m.entry).collect();
    loop {
        while let Some(n) = work.pop() {
            if closure.contains(&n) {
                continue;
            }
            if closure.len() >= MAX_CLOSURE {
                truncated = true;
                work.clear();
                break;
            }
            closure.insert(n);
            let node = g.node(n);
            work.extend(g.predecessors(n, Layer::Ddg));
            if let Some(o) = g.owner(n) {
                work.push(o);
                work.extend(g.predecessors(o, Layer::Cdg).filter(|p| !entries.contains(p)));
                if o == n && (node.kind == NodeKind::ControlStructure || g.out_edges(n, Layer::Cfg).count() > 1) {
                    work.extend(g.owned(n).iter().copied());
                }
            }
            if node.kind == NodeKind::Identifier {
                let m = g.method_of(n);
                let decl = locals.get(&(m, node.name())).cloned().or_else(|| {
                    let gl: Vec<NodeId> = g.globals().filter(|l| l.name() == node.name()).map(|l| l.id).collect();
                    (!gl.is_empty()).then_some(gl)
                });
                if let Some(d) = decl {
                    for l in d {
                        work.push(l);
                        work.extend(g.ast_children(l));
                    }
                }
            }
        }
        if truncated {
            break;
        }
        // Jumps guarded only by included predicates, their target labels, and
        // the jump a retained label leads into.
        let mut grew = false;
        for &m in g.functions() {
            for n in g.cfg_nodes(m) {
                if closure.contains(&n) || !is_jump(g, n) {
                    continue;
                }
                let ctrl: Vec<NodeId> = g.predecessors(n, Layer::Cdg).filter(|c| !entries.contains(c)).collect();
                let guarded = !ctrl.is_empty() && ctrl.iter().all(|c| closure.contains(c));
                let after_label =
                    g.predecessors(n, Layer::Cfg).any(|p| g.node(p).kind == NodeKind::Label && closure.contains(&p));
                if guarded || (after_label && ctrl.iter().all(|c| closure.contains(c))) {
                    work.push(n);
                    work.extend(g.successors(n, Layer::Cfg).filter(|&s| g.node(s).kind == NodeKind::Label));
                    grew = true;
                }
            }
        }
        if !grew {
            break;
        }
    }
    (closure, truncated)
}

/// Percentage shrinkage of `slice_loc` relative to `original_loc`, floored at 0.
pub fn reduction_ratio(original_loc: u32, slice_loc: u32) -> Result<f64, SliceError> {
    if original_loc == 0 {
        return Err(SliceError::DivisionGuard);
    }
    Ok((100.0 * (1.0 - slice_loc as f64 / original_loc as f64)).max(0.0))
}

pub fn backward_slice(
    paths: &[ExecutionPath],
    inter: &InteracterSet,
    g: &CodePropertyGraph,
    unit: &SourceUnit,
) -> Result<Slice, SliceError> {
    let mut targets: BTreeSet<NodeId> = paths.iter().flat_map(|p| p.nodes.iter().copied()).collect();
    targets.extend(inter.members.iter().copied());
    let (closure, truncated) = pdg_closure(&targets, g);
    let rendered_text = render_closure(&closure, g, unit)?;
    let original_loc = loc(&unit.text);
    let slice_loc = loc(&rendered_text);
    let reduction_pct = reduction_ratio(original_loc, slice_loc)?;
    Ok(Slice {
        paths: paths.to_vec(),
        interacters: inter.clone(),
        closure,
        truncated,
        rendered_text,
        original_loc,
        slice_loc,
        reduction_pct,
    })
}

/// One slice over all paths of a flow set: interacters are taken on the union
/// of their lines.
pub fn slice_flows(paths: &[ExecutionPath], g: &CodePropertyGraph, unit: &SourceUnit) -> Result<Slice, SliceError> {
    let lines: BTreeSet<u32> = paths.iter().flat_map(|p| p.lines.iter().copied()).collect();
    let inter = find_interacters_on(&lines, g);
    backward_slice(paths, &inter, g, unit)
}
