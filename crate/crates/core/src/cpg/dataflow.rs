//! Definitions, uses and reaching definitions over the statement-level CFG.
//!
//! Variables are named by their normalized source text: `x`, `*p`, `a->f`.
//! Dereferences and member accesses are distinct variables from their base.

use super::{CodePropertyGraph, CpgEdge, Layer, NodeId, NodeKind};
use std::collections::{BTreeSet, HashMap, HashSet, VecDeque};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Def {
    pub var: String,
    pub node: NodeId,
    /// Strong definitions kill earlier definitions of the same variable.
    pub strong: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Use {
    pub var: String,
    pub node: NodeId,
}

/// Accesses performed by one CFG node.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StmtAccess {
    pub defs: Vec<Def>,
    pub uses: Vec<Use>,
    /// Dependences inside the statement: (from, to, var).
    pub flows: Vec<(NodeId, NodeId, String)>,
}

type Src = (NodeId, String);

fn norm(code: &str) -> String {
    code.chars().filter(|c| !c.is_whitespace()).collect()
}

struct Analyzer<'g> {
    g: &'g CodePropertyGraph,
    stmt: NodeId,
    acc: StmtAccess,
}

impl Analyzer<'_> {
    fn kids(&self, n: NodeId) -> Vec<NodeId> {
        self.g.ast_children(n).filter(|&c| c == self.stmt || !self.g.is_cfg_node(c)).collect()
    }

    fn use_(&mut self, var: String, node: NodeId) {
        self.acc.uses.push(Use { var, node });
    }

    fn def(&mut self, var: String, node: NodeId, strong: bool) {
        self.acc.defs.push(Def { var, node, strong });
    }

    fn flow_all(&mut self, srcs: &[Src], to: NodeId) {
        for (s, v) in srcs {
            if *s != to {
                self.acc.flows.push((*s, to, v.clone()));
            }
        }
    }

    fn rvalue(&mut self, n: NodeId) -> Vec<Src> {
        let node = self.g.node(n);
        let kids = self.kids(n);
        match node.kind {
            NodeKind::Identifier => {
                self.use_(node.name().to_string(), n);
                vec![(n, node.name().to_string())]
            }
            NodeKind::Literal => vec![],
            NodeKind::Call => self.call(n, &kids),
            NodeKind::Assignment => {
                let (lhs, rhs) = (kids[0], kids[1]);
                let rs = self.rvalue(rhs);
                match self.lvalue(lhs) {
                    Some((v, d, strong, sub)) => {
                        self.def(v.clone(), d, strong);
                        if node.name() != "=" || !strong {
                            self.use_(v.clone(), d);
                        }
                        self.flow_all(&rs, d);
                        self.flow_all(&sub, d);
                        vec![(d, v)]
                    }
                    None => {
                        let mut l = self.rvalue(lhs);
                        l.extend(rs);
                        l
                    }
                }
            }
            NodeKind::Operator => {
                let op = node.name();
                match (op, kids.len()) {
                    ("++" | "--", 1) => match self.lvalue(kids[0]) {
                        Some((v, d, strong, sub)) => {
                            self.def(v.clone(), d, strong);
                            self.use_(v.clone(), d);
                            self.flow_all(&sub, d);
                            vec![(d, v)]
                        }
                        None => self.rvalue(kids[0]),
                    },
                    ("*", 1) | ("->", 1) | (".", 1) => {
                        let var = norm(&node.code);
                        self.use_(var.clone(), n);
                        let mut s = vec![(n, var)];
                        s.extend(self.rvalue(kids[0]));
                        s
                    }
                    ("sizeof", _) => vec![],
                    _ => kids.iter().flat_map(|&c| self.rvalue(c)).collect(),
                }
            }
            _ => kids.iter().flat_map(|&c| self.rvalue(c)).collect(),
        }
    }

    fn call(&mut self, n: NodeId, kids: &[NodeId]) -> Vec<Src> {
        let mut srcs = Vec::new();
        let mut weak = Vec::new();
        for &k in kids {
            if self.g.node(k).kind != NodeKind::Argument {
                srcs.extend(self.rvalue(k));
                continue;
            }
            let Some(e) = self.kids(k).first().copied() else { continue };
            let en = self.g.node(e);
            let is_addr = en.kind == NodeKind::Operator && en.name() == "&" && self.kids(e).len() == 1;
            let is_array =
                en.kind == NodeKind::Identifier && en.type_full_name.as_deref().is_some_and(|t| t.ends_with("[]"));
            if is_addr {
                let inner = self.kids(e)[0];
                match self.lvalue(inner) {
                    Some((v, d, _, sub)) => {
                        self.def(v.clone(), d, false);
                        self.use_(v.clone(), d);
                        srcs.push((d, v));
                        srcs.extend(sub);
                        weak.push(d);
                    }
                    None => srcs.extend(self.rvalue(inner)),
                }
            } else if is_array {
                let v = en.name().to_string();
                self.def(v.clone(), e, false);
                self.use_(v.clone(), e);
                srcs.push((e, v));
                weak.push(e);
            } else {
                srcs.extend(self.rvalue(e));
            }
        }
        self.flow_all(&srcs, n);
        for d in weak {
            self.flow_all(&srcs, d);
        }
        vec![(n, format!("{}()", self.g.node(n).name()))]
    }

    /// (variable, defining node, strong, values read while locating it)
    fn lvalue(&mut self, n: NodeId) -> Option<(String, NodeId, bool, Vec<Src>)> {
        let node = self.g.node(n);
        let kids = self.kids(n);
        match (node.kind, node.name(), kids.len()) {
            (NodeKind::Identifier, name, _) => Some((name.to_string(), n, true, vec![])),
            (NodeKind::Operator, "->" | "." | "*", 1) => {
                let sub = self.rvalue(kids[0]);
                Some((norm(&node.code), n, true, sub))
            }
            (NodeKind::Operator, "[]", 2) => {
                let (v, d, _, mut sub) = self.lvalue(kids[0])?;
                sub.extend(self.rvalue(kids[1]));
                Some((v, d, false, sub))
            }
            (NodeKind::Operator, "cast", 1) => self.lvalue(kids[0]),
            _ => None,
        }
    }

    fn statement(&mut self) {
        let s = self.stmt;
        let node = self.g.node(s);
        match node.kind {
            NodeKind::Local => {
                let kids = self.kids(s);
                if let (Some(&id), Some(&init)) = (kids.first(), kids.get(1)) {
                    let srcs = self.rvalue(init);
                    self.def(node.name().to_string(), id, true);
                    self.flow_all(&srcs, id);
                }
            }
            NodeKind::ControlStructure if node.name() == "return" => {
                let ret = self.g.method_of(s).and_then(|m| self.g.method_info(m)).map(|i| i.ret);
                for c in self.kids(s) {
                    let srcs = self.rvalue(c);
                    if let Some(r) = ret {
                        self.flow_all(&srcs, r);
                    }
                }
            }
            NodeKind::ControlStructure => {
                for c in self.kids(s) {
                    self.rvalue(c);
                }
            }
            NodeKind::Label | NodeKind::Entry | NodeKind::Exit => {}
            _ => {
                self.rvalue(s);
            }
        }
    }
}

/// Accesses of one CFG node (ENTRY definitions excluded).
pub fn statement_accesses(g: &CodePropertyGraph, stmt: NodeId) -> StmtAccess {
    let mut a = Analyzer { g, stmt, acc: StmtAccess::default() };
    a.statement();
    a.acc
}

/// Definitions that hold on entry to `method`: parameters and unshadowed globals.
pub fn entry_defs(g: &CodePropertyGraph, method: NodeId) -> Vec<Def> {
    let mut defs = Vec::new();
    let mut shadow = HashSet::new();
    for n in g.subtree(method) {
        let node = g.node(n);
        if matches!(node.kind, NodeKind::Param | NodeKind::Local) {
            if let Some(name) = &node.name {
                shadow.insert(name.clone());
            }
        }
        if node.kind == NodeKind::Param {
            if let Some(name) = &node.name {
                defs.push(Def { var: name.clone(), node: n, strong: true });
            }
        }
    }
    for gl in g.globals() {
        let name = gl.name();
        if name.is_empty() || shadow.contains(name) {
            continue;
        }
        if let Some(id) = g.ast_children(gl.id).next() {
            defs.push(Def { var: name.to_string(), node: id, strong: true });
        }
    }
    defs
}

#[derive(Clone, PartialEq, Eq, Debug)]
struct Bits(Vec<u64>);

impl Bits {
    fn new(n: usize) -> Self {
        Bits(vec![0; n.div_ceil(64)])
    }
    fn set(&mut self, i: usize) {
        self.0[i / 64] |= 1 << (i % 64);
    }
    fn get(&self, i: usize) -> bool {
        self.0[i / 64] >> (i % 64) & 1 == 1
    }
    fn union_with(&mut self, o: &Bits) {
        for (a, b) in self.0.iter_mut().zip(&o.0) {
            *a |= b;
        }
    }
}

/// Reaching-definition solution for one method.
#[derive(Debug, Clone)]
pub struct ReachingDefs {
    pub defs: Vec<(NodeId, Def)>,
    /// Definitions (indices into `defs`) reaching the entry of each CFG node.
    pub reach_in: HashMap<NodeId, Vec<usize>>,
    pub accesses: HashMap<NodeId, StmtAccess>,
}

/// Solve reaching definitions with a worklist seeded in `order`
/// (defaults to ascending node id).
pub fn reaching_definitions(g: &CodePropertyGraph, method: NodeId, order: Option<&[NodeId]>) -> ReachingDefs {
    let info = *g.method_info(method).expect("method has ENTRY/EXIT");
    let nodes = g.cfg_nodes(method);
    let pos: HashMap<NodeId, usize> = nodes.iter().enumerate().map(|(i, &n)| (n, i)).collect();
    let mut accesses = HashMap::new();
    let mut defs: Vec<(NodeId, Def)> = Vec::new();
    let mut gen: Vec<Vec<usize>> = vec![Vec::new(); nodes.len()];
    for &n in &nodes {
        let mut acc = if n == info.entry { StmtAccess::default() } else { statement_accesses(g, n) };
        if n == info.entry {
            acc.defs = entry_defs(g, method);
        }
        for d in &acc.defs {
            gen[pos[&n]].push(defs.len());
            defs.push((n, d.clone()));
        }
        accesses.insert(n, acc);
    }
    let mut by_var: HashMap<&str, Vec<usize>> = HashMap::new();
    for (i, (_, d)) in defs.iter().enumerate() {
        by_var.entry(d.var.as_str()).or_default().push(i);
    }
    let nd = defs.len();
    let mut gen_bits = vec![Bits::new(nd); nodes.len()];
    let mut kill_bits = vec![Bits::new(nd); nodes.len()];
    for (i, gs) in gen.iter().enumerate() {
        for &d in gs {
            gen_bits[i].set(d);
            if defs[d].1.strong {
                for &k in &by_var[defs[d].1.var.as_str()] {
                    kill_bits[i].set(k);
                }
            }
        }
    }
    let preds: Vec<Vec<usize>> =
        nodes.iter().map(|&n| g.predecessors(n, Layer::Cfg).filter_map(|p| pos.get(&p).copied()).collect()).collect();
    let succs: Vec<Vec<usize>> =
        nodes.iter().map(|&n| g.successors(n, Layer::Cfg).filter_map(|s| pos.get(&s).copied()).collect()).collect();
    let mut inn = vec![Bits::new(nd); nodes.len()];
    let mut out = vec![Bits::new(nd); nodes.len()];
    let seed: Vec<usize> = match order {
        Some(o) => o.iter().filter_map(|n| pos.get(n).copied()).collect(),
        None => (0..nodes.len()).collect(),
    };
    let mut queued = vec![false; nodes.len()];
    let mut work = VecDeque::new();
    for i in seed.into_iter().chain(0..nodes.len()) {
        if !queued[i] {
            queued[i] = true;
            work.push_back(i);
        }
    }
    while let Some(i) = work.pop_front() {
        queued[i] = false;
        let mut new_in = Bits::new(nd);
        for &p in &preds[i] {
            new_in.union_with(&out[p]);
        }
        let mut new_out = gen_bits[i].clone();
        for (w, (a, k)) in new_out.0.iter_mut().zip(new_in.0.iter().zip(&kill_bits[i].0)) {
            *w |= a & !k;
        }
        inn[i] = new_in;
        if new_out != out[i] {
            out[i] = new_out;
            for &s in &succs[i] {
                if !queued[s] {
                    queued[s] = true;
                    work.push_back(s);
                }
            }
        }
    }
    let reach_in = nodes.iter().enumerate().map(|(i, &n)| (n, (0..nd).filter(|&d| inn[i].get(d)).collect())).collect();
    ReachingDefs { defs, reach_in, accesses }
}

/// Inter-statement def→use pairs of one method.
pub fn def_use_pairs(rd: &ReachingDefs) -> BTreeSet<(NodeId, NodeId, String)> {
    let mut out = BTreeSet::new();
    for (n, acc) in &rd.accesses {
        let reaching = &rd.reach_in[n];
        for u in &acc.uses {
            for &d in reaching {
                let def = &rd.defs[d].1;
                if def.var == u.var && def.node != u.node {
                    out.insert((def.node, u.node, u.var.clone()));
                }
            }
        }
    }
    out
}

/// All DDG edges of the graph, sorted.
pub fn ddg_edges(g: &CodePropertyGraph) -> Vec<CpgEdge> {
    let mut set: BTreeSet<(NodeId, NodeId, String)> = BTreeSet::new();
    for &m in g.functions() {
        let rd = reaching_definitions(g, m, None);
        set.extend(def_use_pairs(&rd));
        for acc in rd.accesses.values() {
            for (s, d, v) in &acc.flows {
                if s != d && !v.is_empty() {
                    set.insert((*s, *d, v.clone()));
                }
            }
        }
    }
    // global initializers
    for gl in g.globals() {
        let acc = statement_accesses(g, gl.id);
        for (s, d, v) in acc.flows {
            set.insert((s, d, v));
        }
    }
    set.into_iter()
        .map(|(src, dst, var)| CpgEdge { src, dst, layer: Layer::Ddg, var: Some(var), label: None })
        .collect()
}
