//! Code property graph: typed nodes with AST, CFG, DDG and CDG edge layers.

pub(crate) mod build;
pub mod cdg;
pub mod dataflow;
mod serial;

pub use build::build_cpg;
pub use serial::{load_cpg, save_cpg, SCHEMA_VERSION};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type NodeId = u32;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CpgError {
    #[error("malformed AST: {0}")]
    MalformedAst(String),
    #[error("goto at line {line} targets missing label `{label}`")]
    UnresolvedGoto { label: String, line: u32 },
    #[error("graph format error: {0}")]
    Format(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum NodeKind {
    Method,
    MethodReturn,
    Param,
    Call,
    Argument,
    Identifier,
    Literal,
    ControlStructure,
    Assignment,
    Block,
    Label,
    Entry,
    Exit,
    /// One declared variable (declarator) of a declaration statement.
    Local,
    /// Non-call operator expression: arithmetic, comparison, member access, cast, …
    Operator,
}

impl NodeKind {
    pub const ALL: [NodeKind; 15] = [
        NodeKind::Method,
        NodeKind::MethodReturn,
        NodeKind::Param,
        NodeKind::Call,
        NodeKind::Argument,
        NodeKind::Identifier,
        NodeKind::Literal,
        NodeKind::ControlStructure,
        NodeKind::Assignment,
        NodeKind::Block,
        NodeKind::Label,
        NodeKind::Entry,
        NodeKind::Exit,
        NodeKind::Local,
        NodeKind::Operator,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            NodeKind::Method => "METHOD",
            NodeKind::MethodReturn => "METHOD_RETURN",
            NodeKind::Param => "PARAM",
            NodeKind::Call => "CALL",
            NodeKind::Argument => "ARGUMENT",
            NodeKind::Identifier => "IDENTIFIER",
            NodeKind::Literal => "LITERAL",
            NodeKind::ControlStructure => "CONTROL_STRUCTURE",
            NodeKind::Assignment => "ASSIGNMENT",
            NodeKind::Block => "BLOCK",
            NodeKind::Label => "LABEL",
            NodeKind::Entry => "ENTRY",
            NodeKind::Exit => "EXIT",
            NodeKind::Local => "LOCAL",
            NodeKind::Operator => "OPERATOR",
        }
    }
}

impl std::fmt::Display for NodeKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CpgNode {
    pub id: NodeId,
    pub kind: NodeKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub code: String,
    pub line_number: u32,
    pub line_end: u32,
    pub order: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub type_full_name: Option<String>,
    /// Preorder index of the originating syntax node, comments excluded.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ast_index: Option<u32>,
}

impl CpgNode {
    pub fn name(&self) -> &str {
        self.name.as_deref().unwrap_or("")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Layer {
    Ast,
    Cfg,
    Ddg,
    Cdg,
}

impl Layer {
    pub const ALL: [Layer; 4] = [Layer::Ast, Layer::Cfg, Layer::Ddg, Layer::Cdg];

    fn idx(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CfgLabel {
    Seq,
    True,
    False,
    Case,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CpgEdge {
    pub src: NodeId,
    pub dst: NodeId,
    pub layer: Layer,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub var: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<CfgLabel>,
}

/// Per-method synthetic nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MethodInfo {
    pub method: NodeId,
    pub entry: NodeId,
    pub exit: NodeId,
    pub ret: NodeId,
}

/// An immutable code property graph with layer-indexed adjacency.
#[derive(Debug, Clone)]
pub struct CodePropertyGraph {
    unit: String,
    nodes: Vec<CpgNode>,
    edges: Vec<CpgEdge>,
    functions: Vec<NodeId>,
    out_adj: [Vec<Vec<u32>>; 4],
    in_adj: [Vec<Vec<u32>>; 4],
    ast_parent: Vec<Option<NodeId>>,
    owner: Vec<Option<NodeId>>,
    owned: Vec<Vec<NodeId>>,
    method_of: Vec<Option<NodeId>>,
    methods: Vec<MethodInfo>,
}

impl PartialEq for CodePropertyGraph {
    fn eq(&self, other: &Self) -> bool {
        self.unit == other.unit
            && self.nodes == other.nodes
            && self.edges == other.edges
            && self.functions == other.functions
    }
}

impl CodePropertyGraph {
    /// Assemble a graph and derive its indices. Node ids must equal positions.
    pub fn from_parts(
        unit: String,
        nodes: Vec<CpgNode>,
        edges: Vec<CpgEdge>,
        functions: Vec<NodeId>,
    ) -> Result<Self, CpgError> {
        let n = nodes.len();
        for (i, node) in nodes.iter().enumerate() {
            if node.id as usize != i {
                return Err(CpgError::Format(format!("node at position {i} has id {}", node.id)));
            }
            if node.kind == NodeKind::Identifier && node.name().is_empty() {
                return Err(CpgError::Format(format!("identifier {i} has no name")));
            }
        }
        let empty = || vec![Vec::new(); n];
        let mut out_adj = [empty(), empty(), empty(), empty()];
        let mut in_adj = [empty(), empty(), empty(), empty()];
        let mut ast_parent = vec![None; n];
        for (ei, e) in edges.iter().enumerate() {
            if e.src as usize >= n || e.dst as usize >= n {
                return Err(CpgError::Format(format!("edge {ei} references a missing node")));
            }
            if (e.layer == Layer::Ddg) != e.var.as_deref().is_some_and(|v| !v.is_empty()) {
                return Err(CpgError::Format(format!("edge {ei}: var must be set exactly on DDG edges")));
            }
            out_adj[e.layer.idx()][e.src as usize].push(ei as u32);
            in_adj[e.layer.idx()][e.dst as usize].push(ei as u32);
            if e.layer == Layer::Ast {
                ast_parent[e.dst as usize] = Some(e.src);
            }
        }
        for &f in &functions {
            if nodes.get(f as usize).map(|x| x.kind) != Some(NodeKind::Method) {
                return Err(CpgError::Format(format!("function id {f} is not a METHOD")));
            }
        }
        let mut g = CodePropertyGraph {
            unit,
            nodes,
            edges,
            functions,
            out_adj,
            in_adj,
            ast_parent,
            owner: Vec::new(),
            owned: Vec::new(),
            method_of: Vec::new(),
            methods: Vec::new(),
        };
        g.derive()?;
        Ok(g)
    }

    fn derive(&mut self) -> Result<(), CpgError> {
        let n = self.nodes.len();
        let mut methods = Vec::new();
        for &m in &self.functions {
            let find = |k: NodeKind| self.ast_children(m).find(|&c| self.nodes[c as usize].kind == k);
            match (find(NodeKind::Entry), find(NodeKind::Exit), find(NodeKind::MethodReturn)) {
                (Some(entry), Some(exit), Some(ret)) => methods.push(MethodInfo { method: m, entry, exit, ret }),
                _ => return Err(CpgError::Format(format!("method {m} lacks ENTRY/EXIT/METHOD_RETURN"))),
            }
        }
        let mut method_of = vec![None; n];
        let mut owner = vec![None; n];
        for i in 0..n as NodeId {
            let mut cur = Some(i);
            let mut own = None;
            while let Some(c) = cur {
                if own.is_none() && self.is_cfg_node(c) {
                    own = Some(c);
                }
                if self.nodes[c as usize].kind == NodeKind::Method {
                    method_of[i as usize] = Some(c);
                    break;
                }
                cur = self.ast_parent[c as usize];
            }
            owner[i as usize] = own;
        }
        let mut owned = vec![Vec::new(); n];
        for (i, o) in owner.iter().enumerate() {
            if let Some(o) = o {
                owned[*o as usize].push(i as NodeId);
            }
        }
        self.methods = methods;
        self.method_of = method_of;
        self.owner = owner;
        self.owned = owned;
        Ok(())
    }

    pub fn unit(&self) -> &str {
        &self.unit
    }

    pub fn nodes(&self) -> &[CpgNode] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &CpgNode {
        &self.nodes[id as usize]
    }

    pub fn get(&self, id: NodeId) -> Option<&CpgNode> {
        self.nodes.get(id as usize)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn edges(&self) -> &[CpgEdge] {
        &self.edges
    }

    pub fn edges_in_layer(&self, layer: Layer) -> impl Iterator<Item = &CpgEdge> {
        self.edges.iter().filter(move |e| e.layer == layer)
    }

    pub fn functions(&self) -> &[NodeId] {
        &self.functions
    }

    pub fn methods(&self) -> &[MethodInfo] {
        &self.methods
    }

    pub fn method_info(&self, method: NodeId) -> Option<&MethodInfo> {
        self.methods.iter().find(|m| m.method == method)
    }

    pub fn out_edges(&self, id: NodeId, layer: Layer) -> impl Iterator<Item = &CpgEdge> {
        self.out_adj[layer.idx()][id as usize].iter().map(|&e| &self.edges[e as usize])
    }

    pub fn in_edges(&self, id: NodeId, layer: Layer) -> impl Iterator<Item = &CpgEdge> {
        self.in_adj[layer.idx()][id as usize].iter().map(|&e| &self.edges[e as usize])
    }

    pub fn successors(&self, id: NodeId, layer: Layer) -> impl Iterator<Item = NodeId> + '_ {
        self.out_edges(id, layer).map(|e| e.dst)
    }

    pub fn predecessors(&self, id: NodeId, layer: Layer) -> impl Iterator<Item = NodeId> + '_ {
        self.in_edges(id, layer).map(|e| e.src)
    }

    pub fn ast_children(&self, id: NodeId) -> impl Iterator<Item = NodeId> + '_ {
        self.successors(id, Layer::Ast)
    }

    pub fn ast_parent(&self, id: NodeId) -> Option<NodeId> {
        self.ast_parent[id as usize]
    }

    /// Whether the node participates in a control-flow graph.
    pub fn is_cfg_node(&self, id: NodeId) -> bool {
        let k = self.nodes[id as usize].kind;
        k == NodeKind::Entry
            || k == NodeKind::Exit
            || !self.out_adj[Layer::Cfg.idx()][id as usize].is_empty()
            || !self.in_adj[Layer::Cfg.idx()][id as usize].is_empty()
    }

    /// The CFG node (statement or condition) whose evaluation contains `id`.
    pub fn owner(&self, id: NodeId) -> Option<NodeId> {
        self.owner[id as usize]
    }

    /// Nodes whose owner is `stmt`, including `stmt` itself.
    pub fn owned(&self, stmt: NodeId) -> &[NodeId] {
        &self.owned[stmt as usize]
    }

    pub fn method_of(&self, id: NodeId) -> Option<NodeId> {
        self.method_of[id as usize]
    }

    /// All nodes under `id` in the AST, `id` included, in preorder.
    pub fn subtree(&self, id: NodeId) -> Vec<NodeId> {
        let mut out = Vec::new();
        let mut stack = vec![id];
        while let Some(n) = stack.pop() {
            out.push(n);
            let ch: Vec<_> = self.ast_children(n).collect();
            stack.extend(ch.into_iter().rev());
        }
        out
    }

    /// CFG nodes belonging to a method, sorted by id.
    pub fn cfg_nodes(&self, method: NodeId) -> Vec<NodeId> {
        let mut v: Vec<NodeId> = (0..self.nodes.len() as NodeId)
            .filter(|&i| self.method_of(i) == Some(method) && self.is_cfg_node(i))
            .collect();
        v.sort_unstable();
        v
    }

    /// Global declarations (LOCAL nodes outside any method).
    pub fn globals(&self) -> impl Iterator<Item = &CpgNode> {
        self.nodes.iter().filter(|n| n.kind == NodeKind::Local && self.method_of(n.id).is_none())
    }

    pub fn ddg_edges(&self) -> impl Iterator<Item = &CpgEdge> {
        self.edges_in_layer(Layer::Ddg)
    }
}

#[cfg(test)]
mod tests;
