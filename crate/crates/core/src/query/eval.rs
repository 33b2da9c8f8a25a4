use super::flows::reachable_by_flows;
use super::parser::selector_kind;
use super::{BinOp, EvalError, Expr, Literal, NodeSet, Pos, QueryScript, QueryValue, Scalar};
use crate::cpg::{CodePropertyGraph, CpgNode, NodeId, NodeKind};
use regex::Regex;
use std::collections::{BTreeSet, HashMap};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvalOptions {
    pub max_len: usize,
    pub max_paths: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions { max_len: 64, max_paths: 256 }
    }
}

pub fn eval_query(script: &QueryScript, g: &CodePropertyGraph) -> Result<QueryValue, EvalError> {
    eval_query_with(script, g, &EvalOptions::default())
}

pub fn eval_query_with(
    script: &QueryScript,
    g: &CodePropertyGraph,
    opts: &EvalOptions,
) -> Result<QueryValue, EvalError> {
    let mut ev = Evaluator { g, opts: *opts, env: HashMap::new(), regexes: HashMap::new() };
    for b in &script.bindings {
        let v = ev.eval(&b.expr)?;
        ev.env.insert(b.name.clone(), v);
    }
    ev.eval(&script.final_expr)
}

fn runtime(pos: Pos, message: impl Into<String>) -> EvalError {
    EvalError::Runtime { pos, message: message.into() }
}

struct Evaluator<'g> {
    g: &'g CodePropertyGraph,
    opts: EvalOptions,
    env: HashMap<String, QueryValue>,
    regexes: HashMap<String, Regex>,
}

enum Val {
    Root,
    V(QueryValue),
}

fn truthy(v: &QueryValue) -> bool {
    match v {
        QueryValue::Nodes(n) => !n.is_empty(),
        QueryValue::Flows(f) => !f.is_empty(),
        QueryValue::List(l) => !l.is_empty(),
        QueryValue::Set(s) => !s.is_empty(),
        QueryValue::Scalar(Scalar::Bool(b)) => *b,
        QueryValue::Scalar(Scalar::Int(i)) => *i != 0,
        QueryValue::Scalar(Scalar::Str(s)) => !s.is_empty(),
    }
}

/// Collapse single-element collections to their element.
fn scalarize(v: &QueryValue) -> Option<Scalar> {
    match v {
        QueryValue::Scalar(s) => Some(s.clone()),
        QueryValue::List(l) if l.len() == 1 => Some(l[0].clone()),
        QueryValue::Set(s) if s.len() == 1 => s.iter().next().cloned(),
        _ => None,
    }
}

fn values_equal(a: &QueryValue, b: &QueryValue) -> bool {
    match (scalarize(a), scalarize(b)) {
        (Some(x), Some(y)) => x == y,
        _ => match (a, b) {
            (QueryValue::List(x), QueryValue::Set(y)) | (QueryValue::Set(y), QueryValue::List(x)) => {
                x.iter().cloned().collect::<BTreeSet<_>>() == *y
            }
            _ => a == b,
        },
    }
}

impl<'g> Evaluator<'g> {
    fn regex(&mut self, pat: &str, pos: Pos) -> Result<Regex, EvalError> {
        if let Some(r) = self.regexes.get(pat) {
            return Ok(r.clone());
        }
        let r = Regex::new(&format!("^(?:{pat})$")).map_err(|e| runtime(pos, format!("invalid regex: {e}")))?;
        self.regexes.insert(pat.to_string(), r.clone());
        Ok(r)
    }

    fn eval(&mut self, e: &Expr) -> Result<QueryValue, EvalError> {
        match self.eval_val(e)? {
            Val::V(v) => Ok(v),
            Val::Root => Err(runtime(e.pos(), "`cpg` alone is not a value; select nodes with a step")),
        }
    }

    fn eval_val(&mut self, e: &Expr) -> Result<Val, EvalError> {
        Ok(Val::V(match e {
            Expr::Root(_) => return Ok(Val::Root),
            Expr::Ref(name, pos) => match self.env.get(name) {
                Some(v) => v.clone(),
                None => return Err(EvalError::UndefinedBinding { name: name.clone(), pos: *pos }),
            },
            Expr::Lit(l, _) => QueryValue::Scalar(match l {
                Literal::Str(s) => Scalar::Str(s.clone()),
                Literal::Int(i) => Scalar::Int(*i),
                Literal::Bool(b) => Scalar::Bool(*b),
            }),
            Expr::Lambda { pos, .. } => return Err(runtime(*pos, "unexpected lambda")),
            Expr::Not(x, _) => QueryValue::Scalar(Scalar::Bool(!truthy(&self.eval(x)?))),
            Expr::Binary { op, lhs, rhs, pos } => {
                let a = self.eval(lhs)?;
                let b = match op {
                    BinOp::And if !truthy(&a) => return Ok(Val::V(QueryValue::Scalar(Scalar::Bool(false)))),
                    BinOp::Or if truthy(&a) => return Ok(Val::V(QueryValue::Scalar(Scalar::Bool(true)))),
                    _ => self.eval(rhs)?,
                };
                let r = match op {
                    BinOp::And | BinOp::Or => truthy(&b),
                    BinOp::Eq => values_equal(&a, &b),
                    BinOp::Ne => !values_equal(&a, &b),
                    _ => {
                        let (Some(x), Some(y)) = (scalarize(&a), scalarize(&b)) else {
                            return Err(runtime(*pos, "ordering comparison needs single values"));
                        };
                        match op {
                            BinOp::Lt => x < y,
                            BinOp::Gt => x > y,
                            BinOp::Le => x <= y,
                            _ => x >= y,
                        }
                    }
                };
                QueryValue::Scalar(Scalar::Bool(r))
            }
            Expr::Step { recv, name, args, pos } => {
                let r = self.eval_val(recv)?;
                return self.step(r, name, args, *pos).map(Val::V);
            }
        }))
    }

    fn nodes_of(&self, r: &Val, pos: Pos) -> Result<Vec<NodeId>, EvalError> {
        match r {
            Val::V(QueryValue::Nodes(n)) => Ok(n.members.clone()),
            Val::Root => Ok((0..self.g.len() as NodeId).collect()),
            Val::V(v) => Err(runtime(pos, format!("expected a node set, found a {}", v.type_name()))),
        }
    }

    fn select(&self, r: &Val, kind: NodeKind, pos: Pos) -> Result<Vec<NodeId>, EvalError> {
        let g = self.g;
        if let Val::Root = r {
            return Ok(g.nodes().iter().filter(|n| n.kind == kind).map(|n| n.id).collect());
        }
        let recv = self.nodes_of(r, pos)?;
        let mut out = Vec::new();
        for id in recv {
            match kind {
                NodeKind::Method => {
                    if g.node(id).kind == NodeKind::Method {
                        out.push(id);
                    } else if let Some(m) = g.method_of(id) {
                        out.push(m);
                    }
                }
                NodeKind::Argument | NodeKind::Param => {
                    let parent_kind = if kind == NodeKind::Argument { NodeKind::Call } else { NodeKind::Method };
                    if g.node(id).kind == parent_kind {
                        out.extend(g.ast_children(id).filter(|&c| g.node(c).kind == kind));
                    }
                }
                _ => out.extend(g.subtree(id).into_iter().filter(|&c| g.node(c).kind == kind)),
            }
        }
        Ok(out)
    }

    fn lambda(&mut self, arg: &Expr, node: NodeId) -> Result<QueryValue, EvalError> {
        let Expr::Lambda { param, body, .. } = arg else {
            return Err(runtime(arg.pos(), "expected a lambda"));
        };
        let saved = self.env.insert(param.clone(), QueryValue::Nodes(NodeSet { members: vec![node] }));
        let r = self.eval(body);
        match saved {
            Some(s) => self.env.insert(param.clone(), s),
            None => self.env.remove(param),
        };
        r
    }

    fn str_lit(args: &[Expr], pos: Pos) -> Result<&str, EvalError> {
        match args {
            [Expr::Lit(Literal::Str(s), _)] => Ok(s),
            _ => Err(runtime(pos, "expected one string literal")),
        }
    }

    fn int_lit(args: &[Expr], pos: Pos) -> Result<i64, EvalError> {
        match args {
            [Expr::Lit(Literal::Int(i), _)] => Ok(*i),
            _ => Err(runtime(pos, "expected one integer literal")),
        }
    }

    fn prop_filter(
        &mut self,
        r: &Val,
        args: &[Expr],
        pos: Pos,
        keep: impl Fn(&CpgNode, &dyn Fn(&str) -> bool) -> bool,
        exact: bool,
    ) -> Result<QueryValue, EvalError> {
        let nodes = self.nodes_of(r, pos)?;
        let pat = Self::str_lit(args, pos)?.to_string();
        let re = if exact { None } else { Some(self.regex(&pat, pos)?) };
        let test = |s: &str| match &re {
            Some(re) => re.is_match(s),
            None => s == pat,
        };
        Ok(QueryValue::Nodes(NodeSet::new(nodes.into_iter().filter(|&n| keep(self.g.node(n), &test)).collect())))
    }

    fn step(&mut self, r: Val, name: &str, args: &[Expr], pos: Pos) -> Result<QueryValue, EvalError> {
        let g = self.g;
        if let Some(kind) = selector_kind(name) {
            let Some(kind) = kind else {
                return Ok(QueryValue::Nodes(NodeSet::new((0..g.len() as NodeId).collect())));
            };
            let mut sel = self.select(&r, kind, pos)?;
            if kind == NodeKind::Argument && args.len() == 1 {
                let k = Self::int_lit(args, pos)?;
                sel.retain(|&n| g.node(n).order as i64 == k);
            }
            return Ok(QueryValue::Nodes(NodeSet::new(sel)));
        }
        let nodes_proj = |this: &Self, f: &dyn Fn(&CpgNode) -> Scalar| -> Result<QueryValue, EvalError> {
            let ns = this.nodes_of(&r, pos)?;
            Ok(QueryValue::List(ns.into_iter().map(|n| f(g.node(n))).collect()))
        };
        match name {
            "name" | "code" | "typeFullName" if args.is_empty() => nodes_proj(self, &|n| {
                Scalar::Str(match name {
                    "name" => n.name().to_string(),
                    "code" => n.code.clone(),
                    _ => n.type_full_name.clone().unwrap_or_default(),
                })
            }),
            "name" | "nameExact" => self.prop_filter(&r, args, pos, |n, t| t(n.name()), name == "nameExact"),
            "code" | "codeExact" => self.prop_filter(&r, args, pos, |n, t| t(&n.code), name == "codeExact"),
            "typeFullName" => self.prop_filter(&r, args, pos, |n, t| n.type_full_name.as_deref().is_some_and(t), false),
            "order" | "lineNumber" if args.is_empty() => {
                if let (Val::V(QueryValue::Flows(f)), "lineNumber") = (&r, name) {
                    return Ok(QueryValue::List(
                        f.paths
                            .iter()
                            .flat_map(|p| p.nodes.iter().map(|&n| Scalar::Int(g.node(n).line_number as i64)))
                            .collect(),
                    ));
                }
                nodes_proj(self, &|n| Scalar::Int(if name == "order" { n.order as i64 } else { n.line_number as i64 }))
            }
            "order" | "lineNumber" => {
                let k = Self::int_lit(args, pos)?;
                let ns = self.nodes_of(&r, pos)?;
                Ok(QueryValue::Nodes(NodeSet::new(
                    ns.into_iter()
                        .filter(|&n| {
                            let nd = g.node(n);
                            (if name == "order" { nd.order } else { nd.line_number }) as i64 == k
                        })
                        .collect(),
                )))
            }
            "where" | "whereNot" | "filter" | "filterNot" => {
                let ns = self.nodes_of(&r, pos)?;
                let arg = args.first().ok_or_else(|| runtime(pos, "missing predicate"))?;
                let negate = name.ends_with("Not");
                let mut kept = Vec::new();
                for n in ns {
                    if truthy(&self.lambda(arg, n)?) != negate {
                        kept.push(n);
                    }
                }
                Ok(QueryValue::Nodes(NodeSet { members: kept }))
            }
            "reachableByFlows" => {
                let targets = NodeSet::new(self.nodes_of(&r, pos)?);
                let mut src = Vec::new();
                for a in args {
                    match self.eval(a)? {
                        QueryValue::Nodes(n) => src.extend(n.members),
                        v => {
                            return Err(runtime(
                                a.pos(),
                                format!("flow sources must be nodes, found a {}", v.type_name()),
                            ))
                        }
                    }
                }
                let sources = NodeSet::new(src);
                Ok(QueryValue::Flows(reachable_by_flows(&targets, &sources, g, self.opts.max_len, self.opts.max_paths)))
            }
            _ => {
                let Val::V(v) = r else {
                    return Err(runtime(pos, format!("`{name}` cannot be applied to `cpg`")));
                };
                self.collection_step(v, name, args, pos)
            }
        }
    }

    fn collection_step(&mut self, v: QueryValue, name: &str, args: &[Expr], pos: Pos) -> Result<QueryValue, EvalError> {
        let size = |v: &QueryValue| match v {
            QueryValue::Nodes(n) => n.len(),
            QueryValue::Flows(f) => f.len(),
            QueryValue::List(l) => l.len(),
            QueryValue::Set(s) => s.len(),
            QueryValue::Scalar(_) => 1,
        };
        Ok(match name {
            "l" | "toList" => match v {
                QueryValue::Set(s) => QueryValue::List(s.into_iter().collect()),
                other => other,
            },
            "toSet" => match v {
                QueryValue::List(l) => QueryValue::Set(l.into_iter().collect()),
                other => other,
            },
            "size" => QueryValue::Scalar(Scalar::Int(size(&v) as i64)),
            "isEmpty" => QueryValue::Scalar(Scalar::Bool(size(&v) == 0)),
            "nonEmpty" => QueryValue::Scalar(Scalar::Bool(size(&v) > 0)),
            "equals" => {
                let a = self.eval(args.first().ok_or_else(|| runtime(pos, "missing argument"))?)?;
                QueryValue::Scalar(Scalar::Bool(values_equal(&v, &a)))
            }
            "intersect" => {
                let a = self.eval(args.first().ok_or_else(|| runtime(pos, "missing argument"))?)?;
                match (v, a) {
                    (QueryValue::Nodes(x), QueryValue::Nodes(y)) => QueryValue::Nodes(NodeSet {
                        members: x.members.into_iter().filter(|n| y.contains(*n)).collect(),
                    }),
                    (x, y) => {
                        let set = |v: QueryValue| -> Result<BTreeSet<Scalar>, EvalError> {
                            match v {
                                QueryValue::List(l) => Ok(l.into_iter().collect()),
                                QueryValue::Set(s) => Ok(s),
                                QueryValue::Scalar(s) => Ok(BTreeSet::from([s])),
                                other => Err(runtime(pos, format!("cannot intersect a {}", other.type_name()))),
                            }
                        };
                        let (x, y) = (set(x)?, set(y)?);
                        QueryValue::Set(x.intersection(&y).cloned().collect())
                    }
                }
            }
            "matches" => {
                let re = self.regex(Self::str_lit(args, pos)?, pos)?;
                let strs: Vec<Scalar> = match v {
                    QueryValue::List(l) => l,
                    QueryValue::Set(s) => s.into_iter().collect(),
                    QueryValue::Scalar(s) => vec![s],
                    other => return Err(runtime(pos, format!("`matches` cannot apply to a {}", other.type_name()))),
                };
                let ok = !strs.is_empty() && strs.iter().all(|s| matches!(s, Scalar::Str(t) if re.is_match(t)));
                QueryValue::Scalar(Scalar::Bool(ok))
            }
            _ => return Err(runtime(pos, format!("`{name}` is not supported here"))),
        })
    }
}
