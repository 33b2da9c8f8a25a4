//! Line-annotated syntax tree.
//!
//! Child layout per kind:
//!
//! | kind | children |
//! |------|----------|
//! | `TranslationUnit` | top-level items |
//! | `FunctionDef` | `ParamDecl`*, `Block` |
//! | `FunctionDecl` | `ParamDecl`* |
//! | `VarDecl` | `Declarator`+ |
//! | `Declarator` | `Identifier`, initializer? |
//! | `If` | cond, then, else? |
//! | `While` | cond, body |
//! | `DoWhile` | body, cond |
//! | `For` | init, cond, step, body (missing parts are `Empty`) |
//! | `Switch` | cond, body |
//! | `Case` | value (absent for `default`) |
//! | `Return` | value? |
//! | `ExprStmt` | expr |
//! | `Call` | callee, args* |
//! | `BinaryOp` / `Assign` / `Index` | lhs, rhs |
//! | `UnaryOp` / `Cast` / `Member` | operand |
//! | `Conditional` | cond, then, else |

use serde::{Deserialize, Serialize};
use std::ops::Range;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AstKind {
    TranslationUnit,
    FunctionDef,
    FunctionDecl,
    ParamDecl,
    VarDecl,
    Declarator,
    TypeDecl,
    Directive,
    If,
    While,
    DoWhile,
    For,
    Switch,
    Case,
    Goto,
    Label,
    Break,
    Continue,
    Return,
    Block,
    ExprStmt,
    Empty,
    Call,
    Identifier,
    Literal,
    BinaryOp,
    UnaryOp,
    Assign,
    Member,
    Index,
    Cast,
    Conditional,
    InitList,
    Comment,
}

impl AstKind {
    /// Kinds that occupy a statement position inside a block.
    pub fn is_statement(self) -> bool {
        use AstKind::*;
        matches!(
            self,
            VarDecl
                | TypeDecl
                | If
                | While
                | DoWhile
                | For
                | Switch
                | Case
                | Goto
                | Label
                | Break
                | Continue
                | Return
                | Block
                | ExprStmt
                | Empty
                | Directive
                | Comment
        )
    }

    pub fn is_loop(self) -> bool {
        matches!(self, AstKind::While | AstKind::DoWhile | AstKind::For)
    }
}

/// Inclusive 1-based line span.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub start_line: u32,
    pub end_line: u32,
}

impl Span {
    pub fn contains(&self, other: &Span) -> bool {
        self.start_line <= other.start_line && other.end_line <= self.end_line
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AstNode {
    pub kind: AstKind,
    /// Declared/called/operator name, label, or literal text.
    pub name: Option<String>,
    /// Byte range of the identifier that carries `name`, when it is one.
    pub name_range: Option<Range<usize>>,
    /// Type text for declarations and casts; `prefix`/`postfix` for `++`/`--`;
    /// `->`/`.` for member access.
    pub detail: Option<String>,
    pub children: Vec<AstNode>,
    pub span: Span,
    /// Byte range into the unit text.
    pub range: Range<usize>,
    /// Verbatim source text, `text[range]`.
    pub code: String,
}

impl AstNode {
    pub fn name(&self) -> &str {
        self.name.as_deref().unwrap_or("")
    }

    pub fn child(&self, i: usize) -> Option<&AstNode> {
        self.children.get(i)
    }

    /// Preorder traversal.
    pub fn walk<'a>(&'a self, f: &mut impl FnMut(&'a AstNode)) {
        f(self);
        for c in &self.children {
            c.walk(f);
        }
    }

    /// Preorder traversal with the parent of each node.
    pub fn walk_with_parent<'a>(
        &'a self,
        parent: Option<&'a AstNode>,
        f: &mut impl FnMut(&'a AstNode, Option<&'a AstNode>),
    ) {
        f(self, parent);
        for c in &self.children {
            c.walk_with_parent(Some(self), f);
        }
    }

    pub fn preorder(&self) -> Vec<&AstNode> {
        let mut v = Vec::new();
        self.walk(&mut |n| v.push(n));
        v
    }

    pub fn functions(&self) -> impl Iterator<Item = &AstNode> {
        self.children.iter().filter(|c| c.kind == AstKind::FunctionDef)
    }

    pub fn is_variadic(&self) -> bool {
        self.children.iter().any(|c| c.kind == AstKind::ParamDecl && c.code.trim() == "...")
    }

    pub fn params(&self) -> impl Iterator<Item = &AstNode> {
        self.children.iter().filter(|c| c.kind == AstKind::ParamDecl)
    }

    pub fn body(&self) -> Option<&AstNode> {
        self.children.iter().find(|c| c.kind == AstKind::Block)
    }

    /// Copy with every `Comment` node removed.
    pub fn without_comments(&self) -> AstNode {
        let mut n = self.clone();
        n.children =
            self.children.iter().filter(|c| c.kind != AstKind::Comment).map(AstNode::without_comments).collect();
        n
    }
}
