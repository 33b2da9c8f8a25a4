//! Lowering from the syntax tree to CPG nodes, AST edges and the CFG.

use super::{cdg, dataflow, CfgLabel, CodePropertyGraph, CpgEdge, CpgError, CpgNode, Layer, NodeId, NodeKind};
use crate::frontend::{strip_str, AstKind, AstNode, SourceUnit};
use std::collections::HashMap;

type Key = *const AstNode;

/// Build the full graph for a parsed unit.
pub fn build_cpg(ast: &AstNode, unit: &SourceUnit) -> Result<CodePropertyGraph, CpgError> {
    validate(ast, unit)?;
    let (text, _) = strip_str(&unit.text);
    let mut b = Builder {
        text: &text,
        nodes: Vec::new(),
        edges: Vec::new(),
        index_of: HashMap::new(),
        id_of: HashMap::new(),
        locals_of: HashMap::new(),
        scopes: vec![HashMap::new()],
    };
    let mut idx = 0u32;
    index_tree(ast, &mut idx, &mut b.index_of);

    let mut functions = Vec::new();
    let mut cfg_edges = Vec::new();
    for item in &ast.children {
        match item.kind {
            AstKind::VarDecl => {
                let mut order = 0;
                b.var_decl(item, None, &mut order);
            }
            AstKind::FunctionDef => {
                let (m, entry, exit) = b.method(item);
                functions.push(m);
                let mut cfg = CfgBuilder {
                    id_of: &b.id_of,
                    locals_of: &b.locals_of,
                    edges: Vec::new(),
                    exit,
                    labels: HashMap::new(),
                    gotos: Vec::new(),
                    ctx: Vec::new(),
                };
                cfg.function(item, entry)?;
                cfg_edges.extend(cfg.edges);
            }
            _ => {}
        }
    }
    let mut edges = b.edges;
    edges.extend(cfg_edges.into_iter().map(|(s, d, l)| CpgEdge {
        src: s,
        dst: d,
        layer: Layer::Cfg,
        var: None,
        label: Some(l),
    }));
    let base = CodePropertyGraph::from_parts(unit.id.clone(), b.nodes, edges, functions)?;
    let ddg = dataflow::ddg_edges(&base);
    let cdg = cdg::cdg_edges(&base);
    let CodePropertyGraph { unit: uid, nodes, mut edges, functions, .. } = base;
    edges.extend(ddg);
    edges.extend(cdg);
    CodePropertyGraph::from_parts(uid, nodes, edges, functions)
}

fn validate(ast: &AstNode, unit: &SourceUnit) -> Result<(), CpgError> {
    if ast.kind != AstKind::TranslationUnit {
        return Err(CpgError::MalformedAst(format!("root is {:?}", ast.kind)));
    }
    fn check(n: &AstNode, text: &str) -> Result<(), CpgError> {
        if n.range.end > text.len() || text.get(n.range.clone()) != Some(n.code.as_str()) {
            return Err(CpgError::MalformedAst(format!(
                "{:?} at line {} does not match the unit text",
                n.kind, n.span.start_line
            )));
        }
        if matches!(n.kind, AstKind::Identifier | AstKind::Literal) && !n.children.is_empty() {
            return Err(CpgError::MalformedAst(format!("{:?} has children", n.kind)));
        }
        for c in &n.children {
            if !n.span.contains(&c.span) {
                return Err(CpgError::MalformedAst(format!("{:?} span escapes its parent {:?}", c.kind, n.kind)));
            }
            check(c, text)?;
        }
        Ok(())
    }
    check(ast, &unit.text)
}

/// Preorder index over the comment-free tree.
pub(crate) fn index_tree(n: &AstNode, idx: &mut u32, out: &mut HashMap<Key, u32>) {
    if n.kind == AstKind::Comment {
        return;
    }
    out.insert(n as Key, *idx);
    *idx += 1;
    for c in &n.children {
        index_tree(c, idx, out);
    }
}

struct Builder<'a> {
    text: &'a str,
    nodes: Vec<CpgNode>,
    edges: Vec<CpgEdge>,
    index_of: HashMap<Key, u32>,
    id_of: HashMap<Key, NodeId>,
    locals_of: HashMap<Key, Vec<NodeId>>,
    scopes: Vec<HashMap<String, String>>,
}

fn strip_semi(s: &str) -> &str {
    s.trim().trim_end_matches(';').trim_end()
}

impl Builder<'_> {
    fn code(&self, a: &AstNode) -> String {
        self.text[a.range.clone()].trim().to_string()
    }

    fn text_between(&self, from: usize, to: usize) -> String {
        self.text[from..to].trim().to_string()
    }

    fn line_of(&self, byte: usize) -> u32 {
        self.text[..byte].bytes().filter(|b| *b == b'\n').count() as u32 + 1
    }

    #[allow(clippy::too_many_arguments)]
    fn add(
        &mut self,
        kind: NodeKind,
        name: Option<String>,
        code: String,
        lines: (u32, u32),
        order: u32,
        ty: Option<String>,
        ast: Option<&AstNode>,
        parent: Option<NodeId>,
    ) -> NodeId {
        let id = self.nodes.len() as NodeId;
        self.nodes.push(CpgNode {
            id,
            kind,
            name,
            code,
            line_number: lines.0,
            line_end: lines.1,
            order,
            type_full_name: ty,
            ast_index: ast.and_then(|a| self.index_of.get(&(a as Key)).copied()),
        });
        if let Some(a) = ast {
            self.id_of.entry(a as Key).or_insert(id);
        }
        if let Some(p) = parent {
            self.edges.push(CpgEdge { src: p, dst: id, layer: Layer::Ast, var: None, label: None });
        }
        id
    }

    fn lookup_type(&self, name: &str) -> Option<String> {
        self.scopes.iter().rev().find_map(|s| s.get(name).cloned())
    }

    fn declare(&mut self, name: &str, ty: &str) {
        if let Some(s) = self.scopes.last_mut() {
            s.insert(name.to_string(), ty.to_string());
        }
    }

    fn method(&mut self, f: &AstNode) -> (NodeId, NodeId, NodeId) {
        let body = f.body().expect("function definition has a body");
        let header = self.text_between(f.range.start, body.range.start);
        let line = f.span.start_line;
        let m = self.add(
            NodeKind::Method,
            f.name.clone(),
            header,
            (line, f.span.end_line),
            1,
            f.detail.clone(),
            Some(f),
            None,
        );
        let entry = self.add(NodeKind::Entry, None, "ENTRY".into(), (line, line), 0, None, None, Some(m));
        self.scopes.push(HashMap::new());
        for (i, p) in f.params().enumerate() {
            if let Some(n) = &p.name {
                let ty = p.detail.clone().unwrap_or_default();
                self.declare(n, &ty);
            }
            self.add(
                NodeKind::Param,
                p.name.clone(),
                self.code(p),
                (p.span.start_line, p.span.end_line),
                i as u32 + 1,
                p.detail.clone(),
                Some(p),
                Some(m),
            );
        }
        let ret_ty = f.detail.clone().unwrap_or_default();
        self.add(NodeKind::MethodReturn, None, ret_ty.clone(), (line, line), 0, Some(ret_ty), None, Some(m));
        let mut order = 0;
        self.stmt(body, m, &mut order);
        self.scopes.pop();
        let end = body.span.end_line;
        let exit = self.add(NodeKind::Exit, None, "EXIT".into(), (end, end), 0, None, None, Some(m));
        (m, entry, exit)
    }

    fn var_decl(&mut self, vd: &AstNode, parent: Option<NodeId>, order: &mut u32) {
        let single = vd.children.len() == 1;
        let mut ids = Vec::new();
        for d in &vd.children {
            let code = if single { strip_semi(&self.code(vd)).to_string() } else { self.code(d) };
            let ty = d.detail.clone().unwrap_or_default();
            *order += 1;
            let local = self.add(
                NodeKind::Local,
                d.name.clone(),
                code,
                (d.span.start_line, d.span.end_line),
                *order,
                Some(ty.clone()),
                Some(d),
                parent,
            );
            ids.push(local);
            let mut k = 0;
            for c in &d.children {
                k += 1;
                if c.kind == AstKind::Identifier {
                    self.add(
                        NodeKind::Identifier,
                        c.name.clone(),
                        self.code(c),
                        (c.span.start_line, c.span.end_line),
                        k,
                        Some(ty.clone()),
                        Some(c),
                        Some(local),
                    );
                } else {
                    self.expr(c, local, k);
                }
            }
            // Scope begins after the initializer.
            if let Some(n) = &d.name {
                self.declare(n, &ty);
            }
        }
        self.locals_of.insert(vd as Key, ids);
    }

    fn cs(&mut self, s: &AstNode, code: String, line_end: u32, parent: NodeId, order: u32) -> NodeId {
        self.add(
            NodeKind::ControlStructure,
            s.name.clone(),
            code,
            (s.span.start_line, line_end),
            order,
            None,
            Some(s),
            Some(parent),
        )
    }

    fn stmt(&mut self, s: &AstNode, parent: NodeId, order: &mut u32) {
        use AstKind::*;
        match s.kind {
            Block => {
                *order += 1;
                let b = self.add(
                    NodeKind::Block,
                    None,
                    String::new(),
                    (s.span.start_line, s.span.end_line),
                    *order,
                    None,
                    Some(s),
                    Some(parent),
                );
                self.scopes.push(HashMap::new());
                let mut k = 0;
                for c in &s.children {
                    self.stmt(c, b, &mut k);
                }
                self.scopes.pop();
            }
            VarDecl => self.var_decl(s, Some(parent), order),
            ExprStmt => {
                *order += 1;
                self.expr(&s.children[0], parent, *order);
            }
            If | While | For | Switch => {
                *order += 1;
                let body = s.children.last().expect("compound statement has a body");
                let body_start = if s.kind == If { s.children[1].range.start } else { body.range.start };
                let header = self.text_between(s.range.start, body_start);
                let hdr_end = self.line_of(s.range.start + header.len());
                let cs = self.cs(s, header, hdr_end, parent, *order);
                self.scopes.push(HashMap::new());
                let mut k = 0;
                for (i, c) in s.children.iter().enumerate() {
                    let is_header_expr = match s.kind {
                        If => i == 0,
                        For => i < 3,
                        _ => i == 0,
                    };
                    match c.kind {
                        Empty => {}
                        VarDecl => self.var_decl(c, Some(cs), &mut k),
                        _ if is_header_expr => {
                            k += 1;
                            self.expr(c, cs, k);
                        }
                        _ => self.stmt(c, cs, &mut k),
                    }
                }
                self.scopes.pop();
            }
            DoWhile => {
                *order += 1;
                let (body, cond) = (&s.children[0], &s.children[1]);
                let code = strip_semi(&self.text_between(body.range.end, s.range.end)).to_string();
                let cs = self.add(
                    NodeKind::ControlStructure,
                    s.name.clone(),
                    code,
                    (cond.span.start_line, cond.span.end_line),
                    *order,
                    None,
                    Some(s),
                    Some(parent),
                );
                let mut k = 0;
                self.stmt(body, cs, &mut k);
                self.expr(cond, cs, k + 1);
            }
            Goto | Break | Continue | Return => {
                *order += 1;
                let code = strip_semi(&self.code(s)).to_string();
                let cs = self.cs(s, code, s.span.end_line, parent, *order);
                if let Some(e) = s.children.first() {
                    self.expr(e, cs, 1);
                }
            }
            Label | Case => {
                *order += 1;
                let l = self.add(
                    NodeKind::Label,
                    s.name.clone(),
                    self.code(s),
                    (s.span.start_line, s.span.end_line),
                    *order,
                    None,
                    Some(s),
                    Some(parent),
                );
                if let Some(v) = s.children.first() {
                    self.expr(v, l, 1);
                }
            }
            _ => {}
        }
    }

    fn expr(&mut self, e: &AstNode, parent: NodeId, order: u32) -> NodeId {
        use AstKind::*;
        let lines = (e.span.start_line, e.span.end_line);
        let code = self.code(e);
        match e.kind {
            Identifier => {
                let ty = self.lookup_type(e.name());
                self.add(NodeKind::Identifier, e.name.clone(), code, lines, order, ty, Some(e), Some(parent))
            }
            Literal => self.add(NodeKind::Literal, e.name.clone(), code, lines, order, None, Some(e), Some(parent)),
            Call => {
                let c = self.add(NodeKind::Call, e.name.clone(), code, lines, order, None, Some(e), Some(parent));
                let callee = &e.children[0];
                if callee.kind != Identifier {
                    self.expr(callee, c, 0);
                }
                for (i, a) in e.children[1..].iter().enumerate() {
                    let arg = self.add(
                        NodeKind::Argument,
                        None,
                        self.code(a),
                        (a.span.start_line, a.span.end_line),
                        i as u32 + 1,
                        None,
                        None,
                        Some(c),
                    );
                    self.expr(a, arg, 1);
                }
                c
            }
            Assign => {
                let n = self.add(NodeKind::Assignment, e.name.clone(), code, lines, order, None, Some(e), Some(parent));
                self.expr(&e.children[0], n, 1);
                self.expr(&e.children[1], n, 2);
                n
            }
            _ => {
                let name = match e.kind {
                    Member => e.detail.clone(),
                    Index => Some("[]".into()),
                    Cast => Some("cast".into()),
                    _ => e.name.clone(),
                };
                let ty = if e.kind == Cast { e.detail.clone() } else { None };
                let n = self.add(NodeKind::Operator, name, code, lines, order, ty, Some(e), Some(parent));
                for (i, c) in e.children.iter().enumerate() {
                    self.expr(c, n, i as u32 + 1);
                }
                n
            }
        }
    }
}

type Frontier = Vec<(NodeId, CfgLabel)>;

struct Flow {
    entry: Option<NodeId>,
    exits: Frontier,
}

struct Ctx {
    is_loop: bool,
    breaks: Frontier,
    continues: Frontier,
    cases: Vec<NodeId>,
    has_default: bool,
}

struct CfgBuilder<'b> {
    id_of: &'b HashMap<Key, NodeId>,
    locals_of: &'b HashMap<Key, Vec<NodeId>>,
    edges: Vec<(NodeId, NodeId, CfgLabel)>,
    exit: NodeId,
    labels: HashMap<String, NodeId>,
    gotos: Vec<(NodeId, String, u32)>,
    ctx: Vec<Ctx>,
}

impl CfgBuilder<'_> {
    fn id(&self, a: &AstNode) -> NodeId {
        self.id_of[&(a as Key)]
    }

    fn enter(&mut self, frontier: &Frontier, node: NodeId) {
        for &(p, l) in frontier {
            self.edges.push((p, node, l));
        }
    }

    fn single(&mut self, frontier: Frontier, node: NodeId) -> Flow {
        self.enter(&frontier, node);
        Flow { entry: Some(node), exits: vec![(node, CfgLabel::Seq)] }
    }

    fn function(&mut self, f: &AstNode, entry: NodeId) -> Result<(), CpgError> {
        let body = f.body().expect("function definition has a body");
        let flow = self.stmt(body, vec![(entry, CfgLabel::Seq)]);
        self.enter(&flow.exits, self.exit);
        for (g, label, line) in std::mem::take(&mut self.gotos) {
            let Some(&l) = self.labels.get(&label) else {
                return Err(CpgError::UnresolvedGoto { label, line });
            };
            self.edges.push((g, l, CfgLabel::Seq));
        }
        Ok(())
    }

    /// Short-circuit decomposition of a condition; `head` stands for its
    /// leftmost leaf.
    fn cond(&mut self, e: &AstNode, frontier: Frontier, head: Option<NodeId>) -> (Frontier, Frontier) {
        if e.kind == AstKind::BinaryOp && matches!(e.name(), "&&" | "||") {
            let (ta, fa) = self.cond(&e.children[0], frontier, head);
            if e.name() == "&&" {
                let (tb, fb) = self.cond(&e.children[1], ta, None);
                (tb, fa.into_iter().chain(fb).collect())
            } else {
                let (tb, fb) = self.cond(&e.children[1], fa, None);
                (ta.into_iter().chain(tb).collect(), fb)
            }
        } else {
            let node = head.unwrap_or_else(|| self.id(e));
            self.enter(&frontier, node);
            (vec![(node, CfgLabel::True)], vec![(node, CfgLabel::False)])
        }
    }

    fn seq<'x>(&mut self, items: impl Iterator<Item = &'x AstNode>, frontier: Frontier) -> Flow {
        let mut entry = None;
        let mut cur = frontier;
        for s in items {
            let f = self.stmt(s, cur);
            entry = entry.or(f.entry);
            cur = f.exits;
        }
        Flow { entry, exits: cur }
    }

    fn push_ctx(&mut self, is_loop: bool) {
        self.ctx.push(Ctx { is_loop, breaks: vec![], continues: vec![], cases: vec![], has_default: false });
    }

    fn stmt(&mut self, s: &AstNode, frontier: Frontier) -> Flow {
        use AstKind::*;
        match s.kind {
            Block => self.seq(s.children.iter(), frontier),
            VarDecl => {
                let locals = self.locals_of[&(s as Key)].clone();
                let mut entry = None;
                let mut cur = frontier;
                for l in locals {
                    let f = self.single(cur, l);
                    entry = entry.or(f.entry);
                    cur = f.exits;
                }
                Flow { entry, exits: cur }
            }
            ExprStmt => {
                let n = self.id(&s.children[0]);
                self.single(frontier, n)
            }
            Label => {
                let n = self.id(s);
                self.labels.insert(s.name().to_string(), n);
                self.single(frontier, n)
            }
            Case => {
                let n = self.id(s);
                if let Some(c) = self.ctx.iter_mut().rev().find(|c| !c.is_loop) {
                    if s.name() == "default" {
                        c.has_default = true;
                    }
                    c.cases.push(n);
                }
                self.single(frontier, n)
            }
            Return => {
                let n = self.id(s);
                self.enter(&frontier, n);
                self.edges.push((n, self.exit, CfgLabel::Seq));
                Flow { entry: Some(n), exits: vec![] }
            }
            Goto => {
                let n = self.id(s);
                self.enter(&frontier, n);
                self.gotos.push((n, s.name().to_string(), s.span.start_line));
                Flow { entry: Some(n), exits: vec![] }
            }
            Break | Continue => {
                let n = self.id(s);
                self.enter(&frontier, n);
                let brk = s.kind == Break;
                if let Some(c) = self.ctx.iter_mut().rev().find(|c| brk || c.is_loop) {
                    if brk {
                        c.breaks.push((n, CfgLabel::Seq));
                    } else {
                        c.continues.push((n, CfgLabel::Seq));
                    }
                }
                Flow { entry: Some(n), exits: vec![] }
            }
            If => {
                let cs = self.id(s);
                let (t, f) = self.cond(&s.children[0], frontier, Some(cs));
                let then = self.stmt(&s.children[1], t);
                let other = match s.children.get(2) {
                    Some(e) => self.stmt(e, f).exits,
                    None => f,
                };
                Flow { entry: Some(cs), exits: then.exits.into_iter().chain(other).collect() }
            }
            While => {
                let cs = self.id(s);
                let (t, f) = self.cond(&s.children[0], frontier, Some(cs));
                self.push_ctx(true);
                let body = self.stmt(&s.children[1], t);
                let ctx = self.ctx.pop().expect("loop context");
                self.enter(&body.exits, cs);
                self.enter(&ctx.continues, cs);
                Flow { entry: Some(cs), exits: f.into_iter().chain(ctx.breaks).collect() }
            }
            DoWhile => {
                let cs = self.id(s);
                self.push_ctx(true);
                let body = self.stmt(&s.children[0], frontier);
                let ctx = self.ctx.pop().expect("loop context");
                let into_cond: Frontier = body.exits.into_iter().chain(ctx.continues).collect();
                let (t, f) = self.cond(&s.children[1], into_cond, Some(cs));
                self.enter(&t, body.entry.unwrap_or(cs));
                Flow { entry: body.entry.or(Some(cs)), exits: f.into_iter().chain(ctx.breaks).collect() }
            }
            For => {
                let cs = self.id(s);
                let (init, cond, step, body) = (&s.children[0], &s.children[1], &s.children[2], &s.children[3]);
                let init_flow = match init.kind {
                    Empty => Flow { entry: None, exits: frontier },
                    VarDecl => self.stmt(init, frontier),
                    _ => {
                        let n = self.id(init);
                        self.single(frontier, n)
                    }
                };
                let (t, f) = if cond.kind == Empty {
                    self.enter(&init_flow.exits, cs);
                    (vec![(cs, CfgLabel::Seq)], vec![])
                } else {
                    self.cond(cond, init_flow.exits, Some(cs))
                };
                self.push_ctx(true);
                let b = self.stmt(body, t);
                let ctx = self.ctx.pop().expect("loop context");
                let back: Frontier = b.exits.into_iter().chain(ctx.continues).collect();
                if step.kind == Empty {
                    self.enter(&back, cs);
                } else {
                    let st = self.id(step);
                    self.enter(&back, st);
                    self.edges.push((st, cs, CfgLabel::Seq));
                }
                Flow { entry: init_flow.entry.or(Some(cs)), exits: f.into_iter().chain(ctx.breaks).collect() }
            }
            Switch => {
                let cs = self.id(s);
                self.enter(&frontier, cs);
                self.push_ctx(false);
                let body = self.stmt(&s.children[1], vec![]);
                let ctx = self.ctx.pop().expect("switch context");
                for &c in &ctx.cases {
                    self.edges.push((cs, c, CfgLabel::Case));
                }
                let mut exits = body.exits;
                exits.extend(ctx.breaks);
                if !ctx.has_default {
                    exits.push((cs, CfgLabel::False));
                }
                Flow { entry: Some(cs), exits }
            }
            _ => Flow { entry: None, exits: frontier },
        }
    }
}
