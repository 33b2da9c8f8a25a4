//! A sandboxed CPGQL subset: `val` bindings of traversal expressions plus one
//! final expression.
//!
//! Regex arguments (`name`, `code`, `typeFullName`, `matches`) use the `regex`
//! crate dialect and must match the whole property value.

mod eval;
pub mod flows;
mod parser;

pub use eval::{eval_query, eval_query_with, EvalOptions};
pub use flows::{reachable_by_flows, ExecutionPath, FlowSet};
pub use parser::parse_query;

use crate::cpg::{CodePropertyGraph, NodeId};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::fmt;
use thiserror::Error;

/// 1-based position in the query text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Pos {
    pub line: u32,
    pub col: u32,
}

impl fmt::Display for Pos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.col)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ErrorCategory {
    Syntax,
    UnknownApi,
    TypeMisuse,
}

impl fmt::Display for ErrorCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ErrorCategory::Syntax => "SYNTAX",
            ErrorCategory::UnknownApi => "UNKNOWN_API",
            ErrorCategory::TypeMisuse => "TYPE_MISUSE",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[error("{category} at {pos}: {message}")]
pub struct QueryError {
    pub category: ErrorCategory,
    pub pos: Pos,
    pub message: String,
}

/// Non-fatal warnings about likely query mistakes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AdvisoryKind {
    /// `code(r)` with a bare identifier: code matches the whole expression text.
    CodeAsName,
    /// A regex argument that does not match its own literal text.
    RegexMisuse,
}

impl fmt::Display for AdvisoryKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AdvisoryKind::CodeAsName => "CODE_AS_NAME",
            AdvisoryKind::RegexMisuse => "REGEX_MISUSE",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Advisory {
    pub kind: AdvisoryKind,
    pub pos: Pos,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("binding `{name}` referenced at {pos} before definition")]
    UndefinedBinding { name: String, pos: Pos },
    #[error("evaluation error at {pos}: {message}")]
    Runtime { pos: Pos, message: String },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Literal {
    Str(String),
    Int(i64),
    Bool(bool),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Eq,
    Ne,
    Lt,
    Gt,
    Le,
    Ge,
    And,
    Or,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    /// `cpg`
    Root(Pos),
    /// A binding or lambda parameter.
    Ref(String, Pos),
    Lit(Literal, Pos),
    Step {
        recv: Box<Expr>,
        name: String,
        args: Vec<Expr>,
        pos: Pos,
    },
    Lambda {
        param: String,
        body: Box<Expr>,
        pos: Pos,
    },
    Binary {
        op: BinOp,
        lhs: Box<Expr>,
        rhs: Box<Expr>,
        pos: Pos,
    },
    Not(Box<Expr>, Pos),
}

impl Expr {
    pub fn pos(&self) -> Pos {
        match self {
            Expr::Root(p) | Expr::Ref(_, p) | Expr::Lit(_, p) | Expr::Not(_, p) => *p,
            Expr::Step { pos, .. } | Expr::Lambda { pos, .. } | Expr::Binary { pos, .. } => *pos,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Binding {
    pub name: String,
    pub expr: Expr,
    pub pos: Pos,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryScript {
    pub bindings: Vec<Binding>,
    pub final_expr: Expr,
    pub advisories: Vec<Advisory>,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Scalar {
    Bool(bool),
    Int(i64),
    Str(String),
}

/// A de-duplicated, id-sorted node list.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct NodeSet {
    pub members: Vec<NodeId>,
}

impl NodeSet {
    pub fn new(mut members: Vec<NodeId>) -> Self {
        members.sort_unstable();
        members.dedup();
        NodeSet { members }
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, id: NodeId) -> bool {
        self.members.binary_search(&id).is_ok()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum QueryValue {
    Nodes(NodeSet),
    Flows(FlowSet),
    List(Vec<Scalar>),
    Set(BTreeSet<Scalar>),
    Scalar(Scalar),
}

impl QueryValue {
    pub fn type_name(&self) -> &'static str {
        match self {
            QueryValue::Nodes(_) => "node set",
            QueryValue::Flows(_) => "flow set",
            QueryValue::List(_) => "list",
            QueryValue::Set(_) => "set",
            QueryValue::Scalar(_) => "scalar",
        }
    }

    pub fn as_flows(&self) -> Option<&FlowSet> {
        match self {
            QueryValue::Flows(f) => Some(f),
            _ => None,
        }
    }

    pub fn as_nodes(&self) -> Option<&NodeSet> {
        match self {
            QueryValue::Nodes(n) => Some(n),
            _ => None,
        }
    }
}

/// One node of a serialized result path.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathNodeRecord {
    pub id: NodeId,
    pub kind: String,
    pub name: Option<String>,
    pub line: u32,
    pub code: String,
}

/// Paths as ordered lists of `{id, kind, name, line, code}`.
pub fn flows_to_records(flows: &FlowSet, g: &CodePropertyGraph) -> Vec<Vec<PathNodeRecord>> {
    flows
        .paths
        .iter()
        .map(|p| {
            p.nodes
                .iter()
                .map(|&id| {
                    let n = g.node(id);
                    PathNodeRecord {
                        id,
                        kind: n.kind.as_str().to_string(),
                        name: n.name.clone(),
                        line: n.line_number,
                        code: n.code.clone(),
                    }
                })
                .collect()
        })
        .collect()
}
