//! Snippet rendering: the closure is mapped back onto the syntax tree and every
//! statement that holds a closure node (or encloses one) is printed, comment-free,
//! with synthesized braces and 4-space indentation.

use super::SliceError;
use crate::cpg::build::index_tree;
use crate::cpg::{CodePropertyGraph, NodeId};
use crate::frontend::{parse, strip_str, AstKind, AstNode, SourceUnit};
use std::collections::{BTreeSet, HashSet};
use std::ops::Range;

type Key = *const AstNode;

struct Renderer<'a> {
    text: &'a str,
    hit: HashSet<Key>,
    lines: Vec<String>,
}

fn indent(depth: usize) -> String {
    "    ".repeat(depth)
}

pub fn render_closure(
    closure: &BTreeSet<NodeId>,
    g: &CodePropertyGraph,
    unit: &SourceUnit,
) -> Result<String, SliceError> {
    if closure.is_empty() {
        return Ok(String::new());
    }
    let ast = parse(unit)?;
    let (text, _) = strip_str(&unit.text);
    let mut index = std::collections::HashMap::new();
    index_tree(&ast, &mut 0, &mut index);
    let wanted: HashSet<u32> = closure.iter().filter_map(|&n| g.get(n).and_then(|n| n.ast_index)).collect();
    let hit = index.iter().filter(|(_, i)| wanted.contains(i)).map(|(k, _)| *k).collect();
    let mut r = Renderer { text: &text, hit, lines: Vec::new() };
    for item in &ast.children {
        match item.kind {
            AstKind::VarDecl if r.hit_expr(item) => {
                let l = r.collapse(item.range.clone());
                r.lines.push(l);
            }
            AstKind::FunctionDef if r.hit_expr(item) => r.function(item),
            _ => {}
        }
    }
    let mut out = r.lines.join("\n");
    if !out.is_empty() {
        out.push('\n');
    }
    Ok(out)
}

impl Renderer<'_> {
    fn collapse(&self, r: Range<usize>) -> String {
        self.text[r].lines().map(str::trim).filter(|l| !l.is_empty()).collect::<Vec<_>>().join(" ")
    }

    fn hit_expr(&self, n: &AstNode) -> bool {
        self.hit.contains(&(n as Key)) || n.children.iter().any(|c| self.hit_expr(c))
    }

    fn here(&self, n: &AstNode) -> bool {
        self.hit.contains(&(n as Key))
    }

    fn included(&self, s: &AstNode) -> bool {
        use AstKind::*;
        let c = &s.children;
        match s.kind {
            If => {
                self.here(s)
                    || self.hit_expr(&c[0])
                    || self.included(&c[1])
                    || c.get(2).is_some_and(|e| self.included(e))
            }
            While | Switch => self.here(s) || self.hit_expr(&c[0]) || self.included(&c[1]),
            DoWhile => self.here(s) || self.included(&c[0]) || self.hit_expr(&c[1]),
            For => {
                self.here(s)
                    || self.hit_expr(&c[0])
                    || self.hit_expr(&c[1])
                    || self.hit_expr(&c[2])
                    || self.included(&c[3])
            }
            Block => c.iter().any(|x| self.included(x)),
            Comment | Empty => false,
            _ => self.hit_expr(s),
        }
    }

    fn push(&mut self, depth: usize, s: impl AsRef<str>) {
        self.lines.push(format!("{}{}", indent(depth), s.as_ref()));
    }

    fn append(&mut self, s: &str) {
        self.lines.last_mut().expect("a line to extend").push_str(s);
    }

    fn function(&mut self, f: &AstNode) {
        let Some(body) = f.body() else { return };
        let header = &self.text[f.range.start..body.range.start];
        let own_line = header[header.trim_end().len()..].contains('\n');
        for l in header.trim_end().lines().map(str::trim_end).filter(|l| !l.trim().is_empty()) {
            self.lines.push(l.to_string());
        }
        if own_line {
            self.lines.push("{".into());
        } else {
            self.append(" {");
        }
        self.block_items(body, 1);
        self.lines.push("}".into());
    }

    /// Included statements of a block; a label left at the end of the block
    /// gets an empty statement so the snippet still parses.
    fn block_items(&mut self, b: &AstNode, depth: usize) {
        let mut last = None;
        for c in &b.children {
            if self.included(c) {
                self.stmt(c, depth);
                last = Some(c.kind);
            }
        }
        if last == Some(AstKind::Label) {
            self.append(" ;");
        }
    }

    /// Body of a compound statement whose header is the current last line.
    fn branch(&mut self, b: &AstNode, depth: usize) {
        if b.kind == AstKind::Block {
            self.append(" {");
            self.block_items(b, depth + 1);
            self.push(depth, "}");
        } else if self.included(b) {
            self.stmt(b, depth + 1);
        } else {
            self.push(depth + 1, ";");
        }
    }

    fn if_stmt(&mut self, s: &AstNode, depth: usize, inline: bool) {
        let then = &s.children[1];
        let header = self.collapse(s.range.start..then.range.start);
        if inline {
            self.append(&header);
        } else {
            self.push(depth, header);
        }
        self.branch(then, depth);
        if let Some(e) = s.children.get(2).filter(|e| self.included(e)) {
            if self.lines.last().is_some_and(|l| *l == format!("{}}}", indent(depth))) {
                self.append(" else");
            } else {
                self.push(depth, "else");
            }
            if e.kind == AstKind::If {
                self.append(" ");
                self.if_stmt(e, depth, true);
            } else {
                self.branch(e, depth);
            }
        }
    }

    fn switch_body(&mut self, b: &AstNode, depth: usize) {
        self.append(" {");
        let kids = &b.children;
        for (i, c) in kids.iter().enumerate() {
            if c.kind == AstKind::Case {
                let group_end =
                    kids[i + 1..].iter().position(|k| k.kind == AstKind::Case).map_or(kids.len(), |p| i + 1 + p);
                if self.here(c) || kids[i + 1..group_end].iter().any(|k| self.included(k)) {
                    let l = self.collapse(c.range.clone());
                    self.push(depth + 1, l);
                }
            } else if self.included(c) {
                self.stmt(c, depth + 2);
            }
        }
        self.push(depth, "}");
    }

    fn stmt(&mut self, s: &AstNode, depth: usize) {
        use AstKind::*;
        match s.kind {
            Block => {
                self.push(depth, "{");
                self.block_items(s, depth + 1);
                self.push(depth, "}");
            }
            If => self.if_stmt(s, depth, false),
            While | For | Switch => {
                let body = s.children.last().expect("loop body");
                let header = self.collapse(s.range.start..body.range.start);
                self.push(depth, header);
                if s.kind == Switch && body.kind == Block {
                    self.switch_body(body, depth);
                } else {
                    self.branch(body, depth);
                }
            }
            DoWhile => {
                let body = &s.children[0];
                self.push(depth, "do");
                self.branch(body, depth);
                let tail = self.collapse(body.range.end..s.range.end);
                if self.lines.last().is_some_and(|l| *l == format!("{}}}", indent(depth))) {
                    self.append(&format!(" {tail}"));
                } else {
                    self.push(depth, tail);
                }
            }
            _ => {
                let l = self.collapse(s.range.clone());
                self.push(depth, l);
            }
        }
    }
}
