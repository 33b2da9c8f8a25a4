//! Tokenizer, parser and static checker for query scripts.

use super::{Advisory, AdvisoryKind, BinOp, Binding, ErrorCategory, Expr, Literal, Pos, QueryError, QueryScript};
use crate::cpg::NodeKind;
use regex::Regex;
use std::collections::HashMap;

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Str(String),
    Int(i64),
    Punct(&'static str),
}

const PUNCTS: &[&str] = &["=>", "==", "!=", "<=", ">=", "&&", "||", ".", "(", ")", ",", "=", "<", ">", "!", ";"];

fn syntax(pos: Pos, message: impl Into<String>) -> QueryError {
    QueryError { category: ErrorCategory::Syntax, pos, message: message.into() }
}

fn misuse(pos: Pos, message: impl Into<String>) -> QueryError {
    QueryError { category: ErrorCategory::TypeMisuse, pos, message: message.into() }
}

fn lex(text: &str) -> Result<Vec<(Tok, Pos)>, QueryError> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1u32, 1u32);
    macro_rules! adv {
        () => {{
            if chars[i] == '\n' {
                line += 1;
                col = 1;
            } else {
                col += 1;
            }
            i += 1;
        }};
    }
    while i < chars.len() {
        let c = chars[i];
        let pos = Pos { line, col };
        if c.is_whitespace() {
            adv!();
        } else if c == '/' && chars.get(i + 1) == Some(&'/') {
            while i < chars.len() && chars[i] != '\n' {
                adv!();
            }
        } else if c.is_ascii_alphabetic() || c == '_' {
            let mut s = String::new();
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                s.push(chars[i]);
                adv!();
            }
            out.push((Tok::Ident(s), pos));
        } else if c.is_ascii_digit() {
            let mut s = String::new();
            while i < chars.len() && chars[i].is_ascii_digit() {
                s.push(chars[i]);
                adv!();
            }
            let n = s.parse().map_err(|_| syntax(pos, "integer literal out of range"))?;
            out.push((Tok::Int(n), pos));
        } else if c == '"' || c == '\'' {
            let q = c;
            adv!();
            let mut s = String::new();
            loop {
                match chars.get(i) {
                    None | Some('\n') => return Err(syntax(pos, "unterminated string literal")),
                    Some(&ch) if ch == q => {
                        adv!();
                        break;
                    }
                    Some('\\') => {
                        adv!();
                        let Some(&e) = chars.get(i) else {
                            return Err(syntax(pos, "unterminated string literal"));
                        };
                        match e {
                            'n' => s.push('\n'),
                            't' => s.push('\t'),
                            '"' | '\'' | '\\' => s.push(e),
                            other => {
                                s.push('\\');
                                s.push(other);
                            }
                        }
                        adv!();
                    }
                    Some(&ch) => {
                        s.push(ch);
                        adv!();
                    }
                }
            }
            out.push((Tok::Str(s), pos));
        } else {
            let rest: String = chars[i..chars.len().min(i + 2)].iter().collect();
            let Some(p) = PUNCTS.iter().find(|p| rest.starts_with(**p)) else {
                return Err(syntax(pos, format!("unexpected character `{c}`")));
            };
            for _ in 0..p.len() {
                adv!();
            }
            out.push((Tok::Punct(p), pos));
        }
    }
    Ok(out)
}

struct Parser {
    toks: Vec<(Tok, Pos)>,
    i: usize,
    end: Pos,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.i).map(|t| &t.0)
    }

    fn peek2(&self) -> Option<&Tok> {
        self.toks.get(self.i + 1).map(|t| &t.0)
    }

    fn pos(&self) -> Pos {
        self.toks.get(self.i).map(|t| t.1).unwrap_or(self.end)
    }

    fn is(&self, p: &str) -> bool {
        matches!(self.peek(), Some(Tok::Punct(q)) if *q == p)
    }

    fn eat(&mut self, p: &str) -> bool {
        if self.is(p) {
            self.i += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, p: &str) -> Result<(), QueryError> {
        if self.eat(p) {
            Ok(())
        } else {
            Err(syntax(self.pos(), format!("expected `{p}`, found {}", self.describe())))
        }
    }

    fn describe(&self) -> String {
        match self.peek() {
            None => "end of input".into(),
            Some(Tok::Ident(s)) => format!("`{s}`"),
            Some(Tok::Str(s)) => format!("string {s:?}"),
            Some(Tok::Int(n)) => format!("`{n}`"),
            Some(Tok::Punct(p)) => format!("`{p}`"),
        }
    }

    fn expr(&mut self) -> Result<Expr, QueryError> {
        let mut lhs = self.and()?;
        while self.is("||") {
            let pos = self.pos();
            self.i += 1;
            let rhs = self.and()?;
            lhs = Expr::Binary { op: BinOp::Or, lhs: Box::new(lhs), rhs: Box::new(rhs), pos };
        }
        Ok(lhs)
    }

    fn and(&mut self) -> Result<Expr, QueryError> {
        let mut lhs = self.cmp()?;
        while self.is("&&") {
            let pos = self.pos();
            self.i += 1;
            let rhs = self.cmp()?;
            lhs = Expr::Binary { op: BinOp::And, lhs: Box::new(lhs), rhs: Box::new(rhs), pos };
        }
        Ok(lhs)
    }

    fn cmp(&mut self) -> Result<Expr, QueryError> {
        let lhs = self.unary()?;
        let op = match self.peek() {
            Some(Tok::Punct("==")) => BinOp::Eq,
            Some(Tok::Punct("!=")) => BinOp::Ne,
            Some(Tok::Punct("<")) => BinOp::Lt,
            Some(Tok::Punct(">")) => BinOp::Gt,
            Some(Tok::Punct("<=")) => BinOp::Le,
            Some(Tok::Punct(">=")) => BinOp::Ge,
            _ => return Ok(lhs),
        };
        let pos = self.pos();
        self.i += 1;
        let rhs = self.unary()?;
        Ok(Expr::Binary { op, lhs: Box::new(lhs), rhs: Box::new(rhs), pos })
    }

    fn unary(&mut self) -> Result<Expr, QueryError> {
        if self.is("!") {
            let pos = self.pos();
            self.i += 1;
            return Ok(Expr::Not(Box::new(self.unary()?), pos));
        }
        self.postfix()
    }

    fn postfix(&mut self) -> Result<Expr, QueryError> {
        let mut e = self.primary()?;
        while self.eat(".") {
            let pos = self.pos();
            let Some(Tok::Ident(name)) = self.peek().cloned() else {
                return Err(syntax(pos, format!("expected step name after `.`, found {}", self.describe())));
            };
            self.i += 1;
            let mut args = Vec::new();
            if self.eat("(") && !self.eat(")") {
                loop {
                    args.push(self.arg()?);
                    if self.eat(")") {
                        break;
                    }
                    self.expect(",")?;
                }
            }
            e = Expr::Step { recv: Box::new(e), name, args, pos };
        }
        Ok(e)
    }

    fn arg(&mut self) -> Result<Expr, QueryError> {
        let pos = self.pos();
        if let (Some(Tok::Ident(p)), Some(Tok::Punct("=>"))) = (self.peek().cloned(), self.peek2()) {
            self.i += 2;
            let body = self.expr()?;
            return Ok(Expr::Lambda { param: p, body: Box::new(body), pos });
        }
        let e = self.expr()?;
        if uses_placeholder(&e) {
            return Ok(Expr::Lambda { param: "_".into(), body: Box::new(e), pos });
        }
        Ok(e)
    }

    fn primary(&mut self) -> Result<Expr, QueryError> {
        let pos = self.pos();
        match self.peek().cloned() {
            Some(Tok::Ident(s)) => {
                self.i += 1;
                Ok(match s.as_str() {
                    "cpg" => Expr::Root(pos),
                    "true" => Expr::Lit(Literal::Bool(true), pos),
                    "false" => Expr::Lit(Literal::Bool(false), pos),
                    "val" => return Err(syntax(pos, "`val` is only allowed at statement start")),
                    _ => Expr::Ref(s, pos),
                })
            }
            Some(Tok::Str(s)) => {
                self.i += 1;
                Ok(Expr::Lit(Literal::Str(s), pos))
            }
            Some(Tok::Int(n)) => {
                self.i += 1;
                Ok(Expr::Lit(Literal::Int(n), pos))
            }
            Some(Tok::Punct("(")) => {
                self.i += 1;
                let e = self.expr()?;
                self.expect(")")?;
                Ok(e)
            }
            _ => Err(syntax(pos, format!("expected expression, found {}", self.describe()))),
        }
    }
}

fn uses_placeholder(e: &Expr) -> bool {
    match e {
        Expr::Ref(n, _) => n == "_",
        Expr::Step { recv, args, .. } => {
            uses_placeholder(recv) || args.iter().any(|a| !matches!(a, Expr::Lambda { .. }) && uses_placeholder(a))
        }
        Expr::Binary { lhs, rhs, .. } => uses_placeholder(lhs) || uses_placeholder(rhs),
        Expr::Not(x, _) => uses_placeholder(x),
        _ => false,
    }
}

/// Parse and statically check a script.
pub fn parse_query(text: &str) -> Result<QueryScript, QueryError> {
    let toks = lex(text)?;
    let last_line = text.lines().count().max(1) as u32;
    let end = Pos { line: last_line, col: text.lines().last().map(|l| l.chars().count() as u32 + 1).unwrap_or(1) };
    let mut p = Parser { toks, i: 0, end };
    let mut bindings: Vec<Binding> = Vec::new();
    let mut final_expr: Option<Expr> = None;
    while p.peek().is_some() {
        if p.eat(";") {
            continue;
        }
        if let Some(f) = &final_expr {
            return Err(syntax(p.pos(), format!("only one final expression is allowed (previous one at {})", f.pos())));
        }
        if matches!(p.peek(), Some(Tok::Ident(v)) if v == "val") {
            p.i += 1;
            let pos = p.pos();
            let Some(Tok::Ident(name)) = p.peek().cloned() else {
                return Err(syntax(pos, "expected binding name after `val`"));
            };
            p.i += 1;
            p.expect("=")?;
            let expr = p.expr()?;
            if bindings.iter().any(|b| b.name == name) || name == "cpg" || name == "_" {
                return Err(syntax(pos, format!("binding `{name}` is already defined")));
            }
            bindings.push(Binding { name, expr, pos });
        } else {
            final_expr = Some(p.expr()?);
        }
    }
    let final_expr = match final_expr {
        Some(e) => e,
        None => match bindings.last() {
            Some(b) => Expr::Ref(b.name.clone(), b.pos),
            None => return Err(syntax(Pos { line: 1, col: 1 }, "empty query")),
        },
    };
    let mut ck = Checker { advisories: Vec::new(), env: HashMap::new() };
    for b in &bindings {
        let t = ck.check(&b.expr)?;
        ck.env.insert(b.name.clone(), t);
    }
    ck.check(&final_expr)?;
    Ok(QueryScript { bindings, final_expr, advisories: ck.advisories })
}

// ---------- static checking ----------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum STy {
    Int,
    Str,
    Bool,
    Any,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Ty {
    Root,
    Nodes(u32),
    Flows,
    List(STy),
    Set(STy),
    Scalar(STy),
    Any,
}

pub(crate) fn mask(k: NodeKind) -> u32 {
    1 << (k as u32)
}

const ALL_KINDS: u32 = (1 << NodeKind::ALL.len()) - 1;

fn typed_kinds() -> u32 {
    mask(NodeKind::Identifier) | mask(NodeKind::Param) | mask(NodeKind::Local) | mask(NodeKind::MethodReturn)
}

/// Node kind produced by a selector step.
pub(crate) fn selector_kind(name: &str) -> Option<Option<NodeKind>> {
    Some(match name {
        "method" => Some(NodeKind::Method),
        "call" => Some(NodeKind::Call),
        "identifier" => Some(NodeKind::Identifier),
        "argument" => Some(NodeKind::Argument),
        "parameter" => Some(NodeKind::Param),
        "literal" => Some(NodeKind::Literal),
        "local" => Some(NodeKind::Local),
        "controlStructure" => Some(NodeKind::ControlStructure),
        "assignment" => Some(NodeKind::Assignment),
        "all" => None,
        _ => return None,
    })
}

fn kinds_text(m: u32) -> String {
    if m == ALL_KINDS {
        return "any node".into();
    }
    NodeKind::ALL.iter().filter(|k| m & mask(**k) != 0).map(|k| k.as_str()).collect::<Vec<_>>().join("|")
}

struct Checker {
    advisories: Vec<Advisory>,
    env: HashMap<String, Ty>,
}

fn is_collection(t: Ty) -> bool {
    matches!(t, Ty::Nodes(_) | Ty::Flows | Ty::List(_) | Ty::Set(_) | Ty::Any)
}

fn elem(t: Ty) -> STy {
    match t {
        Ty::List(s) | Ty::Set(s) | Ty::Scalar(s) => s,
        _ => STy::Any,
    }
}

impl Checker {
    fn check(&mut self, e: &Expr) -> Result<Ty, QueryError> {
        match e {
            Expr::Root(_) => Ok(Ty::Root),
            Expr::Ref(n, _) => Ok(self.env.get(n).copied().unwrap_or(Ty::Any)),
            Expr::Lit(l, _) => Ok(Ty::Scalar(match l {
                Literal::Str(_) => STy::Str,
                Literal::Int(_) => STy::Int,
                Literal::Bool(_) => STy::Bool,
            })),
            Expr::Lambda { pos, .. } => Err(syntax(*pos, "lambda is only allowed as a step argument")),
            Expr::Not(x, pos) => {
                let t = self.check(x)?;
                if !matches!(t, Ty::Scalar(STy::Bool | STy::Any) | Ty::Any) {
                    return Err(misuse(*pos, "`!` applies to boolean values"));
                }
                Ok(Ty::Scalar(STy::Bool))
            }
            Expr::Binary { op, lhs, rhs, pos } => {
                let (a, b) = (self.check(lhs)?, self.check(rhs)?);
                if matches!(op, BinOp::And | BinOp::Or) {
                    for t in [a, b] {
                        if !matches!(t, Ty::Scalar(STy::Bool | STy::Any) | Ty::Any) {
                            return Err(misuse(*pos, "logical operators apply to boolean values"));
                        }
                    }
                }
                Ok(Ty::Scalar(STy::Bool))
            }
            Expr::Step { recv, name, args, pos } => {
                let rt = self.check(recv)?;
                self.step(rt, name, args, *pos)
            }
        }
    }

    fn lambda(&mut self, arg: &Expr, param_ty: Ty) -> Result<Ty, QueryError> {
        let Expr::Lambda { param, body, .. } = arg else {
            return Err(syntax(arg.pos(), "expected a lambda such as `_.name(\"x\")` or `n => ...`"));
        };
        let saved = self.env.insert(param.clone(), param_ty);
        let t = self.check(body);
        match saved {
            Some(s) => {
                self.env.insert(param.clone(), s);
            }
            None => {
                self.env.remove(param);
            }
        }
        t
    }

    fn str_arg(&self, args: &[Expr], name: &str, pos: Pos) -> Result<String, QueryError> {
        match args {
            [Expr::Lit(Literal::Str(s), _)] => Ok(s.clone()),
            _ => Err(syntax(pos, format!("`{name}` expects one string literal"))),
        }
    }

    fn regex_arg(&mut self, args: &[Expr], name: &str, pos: Pos) -> Result<String, QueryError> {
        let s = self.str_arg(args, name, pos)?;
        let re =
            Regex::new(&format!("^(?:{s})$")).map_err(|e| syntax(pos, format!("invalid regex in `{name}`: {e}")))?;
        let meta = s.chars().any(|c| ".+*?()[]{}|^$\\".contains(c));
        if meta && !re.is_match(&s) {
            let exact = if name == "code" { "codeExact" } else { "nameExact" };
            self.advisories.push(Advisory {
                kind: AdvisoryKind::RegexMisuse,
                pos,
                message: format!(
                    "`{name}` takes a regex and \"{s}\" does not match its own text; use `{exact}` for a literal match"
                ),
            });
        }
        Ok(s)
    }

    fn int_arg(&self, args: &[Expr], name: &str, pos: Pos) -> Result<i64, QueryError> {
        match args {
            [Expr::Lit(Literal::Int(n), _)] => Ok(*n),
            _ => Err(syntax(pos, format!("`{name}` expects one integer literal"))),
        }
    }

    fn step(&mut self, rt: Ty, name: &str, args: &[Expr], pos: Pos) -> Result<Ty, QueryError> {
        let nodes_mask = |what: &str| match rt {
            Ty::Nodes(m) => Ok(m),
            Ty::Any => Ok(ALL_KINDS),
            Ty::Root => Err(misuse(pos, format!("`{what}` needs a node traversal, not `cpg` itself"))),
            other => Err(misuse(pos, format!("`{what}` applies to node sets, not {other:?}"))),
        };
        if let Some(kind) = selector_kind(name) {
            if !matches!(rt, Ty::Root | Ty::Nodes(_) | Ty::Any) {
                return Err(misuse(pos, format!("`{name}` applies to `cpg` or node sets")));
            }
            let Some(kind) = kind else {
                if rt != Ty::Root && rt != Ty::Any {
                    return Err(misuse(pos, "`all` applies only to `cpg`"));
                }
                if !args.is_empty() {
                    return Err(syntax(pos, "`all` takes no arguments"));
                }
                return Ok(Ty::Nodes(ALL_KINDS));
            };
            match (kind, rt) {
                (NodeKind::Argument, Ty::Nodes(m)) if m & mask(NodeKind::Call) == 0 => {
                    return Err(misuse(pos, format!("`argument` applies to CALL nodes, not {}", kinds_text(m))));
                }
                (NodeKind::Param, Ty::Nodes(m)) if m & mask(NodeKind::Method) == 0 => {
                    return Err(misuse(pos, format!("`parameter` applies to METHOD nodes, not {}", kinds_text(m))));
                }
                _ => {}
            }
            match (kind, args.len()) {
                (_, 0) => {}
                (NodeKind::Argument, 1) => {
                    self.int_arg(args, name, pos)?;
                }
                _ => return Err(syntax(pos, format!("`{name}` takes no arguments"))),
            }
            return Ok(Ty::Nodes(mask(kind)));
        }
        match name {
            "name" | "code" | "typeFullName" => {
                let m = nodes_mask(name)?;
                if name == "typeFullName" && m & typed_kinds() == 0 {
                    return Err(misuse(pos, format!("`typeFullName` is not a property of {}", kinds_text(m))));
                }
                if args.is_empty() {
                    return Ok(Ty::List(STy::Str));
                }
                let s = self.regex_arg(args, name, pos)?;
                if name == "code" && Regex::new("^[A-Za-z_][A-Za-z0-9_]*$").expect("static regex").is_match(&s) {
                    self.advisories.push(Advisory {
                        kind: AdvisoryKind::CodeAsName,
                        pos,
                        message: format!(
                            "`code` matches the whole expression text, so \"{s}\" only matches a bare identifier; use `name(\"{s}\")` to select by name"
                        ),
                    });
                }
                Ok(Ty::Nodes(m))
            }
            "nameExact" | "codeExact" => {
                let m = nodes_mask(name)?;
                self.str_arg(args, name, pos)?;
                Ok(Ty::Nodes(m))
            }
            "order" => {
                let m = nodes_mask(name)?;
                if args.is_empty() {
                    return Ok(Ty::List(STy::Int));
                }
                self.int_arg(args, name, pos)?;
                Ok(Ty::Nodes(m))
            }
            "lineNumber" => {
                if args.is_empty() {
                    return match rt {
                        Ty::Nodes(_) | Ty::Flows | Ty::Any => Ok(Ty::List(STy::Int)),
                        _ => Err(misuse(pos, "`lineNumber` applies to nodes or flows")),
                    };
                }
                let m = nodes_mask(name)?;
                self.int_arg(args, name, pos)?;
                Ok(Ty::Nodes(m))
            }
            "where" | "whereNot" | "filter" | "filterNot" => {
                let m = nodes_mask(name)?;
                if args.len() != 1 {
                    return Err(syntax(pos, format!("`{name}` takes one lambda")));
                }
                let bt = self.lambda(&args[0], Ty::Nodes(m))?;
                if name.starts_with("filter") && !matches!(bt, Ty::Scalar(STy::Bool | STy::Any) | Ty::Any) {
                    return Err(misuse(pos, format!("`{name}` needs a boolean predicate; use `where` for traversals")));
                }
                if name.starts_with("where") && !is_collection(bt) {
                    return Err(misuse(
                        pos,
                        format!("`{name}` needs a traversal; use `filter` for boolean predicates"),
                    ));
                }
                Ok(Ty::Nodes(m))
            }
            "reachableByFlows" => {
                nodes_mask(name)?;
                if args.is_empty() {
                    return Err(syntax(pos, "`reachableByFlows` needs at least one source traversal"));
                }
                for a in args {
                    let t = self.check(a)?;
                    if !matches!(t, Ty::Nodes(_) | Ty::Any) {
                        return Err(misuse(a.pos(), "`reachableByFlows` sources must be node sets"));
                    }
                }
                Ok(Ty::Flows)
            }
            "l" | "toList" => {
                no_args(args, name, pos)?;
                match rt {
                    Ty::Set(s) => Ok(Ty::List(s)),
                    t if is_collection(t) => Ok(t),
                    _ => Err(misuse(pos, format!("`{name}` applies to collections"))),
                }
            }
            "toSet" => {
                no_args(args, name, pos)?;
                match rt {
                    Ty::List(s) => Ok(Ty::Set(s)),
                    t if is_collection(t) => Ok(t),
                    _ => Err(misuse(pos, "`toSet` applies to collections")),
                }
            }
            "size" | "isEmpty" | "nonEmpty" => {
                no_args(args, name, pos)?;
                if !is_collection(rt) {
                    return Err(misuse(pos, format!("`{name}` applies to collections")));
                }
                Ok(Ty::Scalar(if name == "size" { STy::Int } else { STy::Bool }))
            }
            "intersect" => {
                if args.len() != 1 {
                    return Err(syntax(pos, "`intersect` takes one argument"));
                }
                let at = self.check(&args[0])?;
                match (rt, at) {
                    (Ty::Nodes(a), Ty::Nodes(b)) => Ok(Ty::Nodes(a & b)),
                    (Ty::Any, _) | (_, Ty::Any) => Ok(Ty::Any),
                    (Ty::List(s) | Ty::Set(s), Ty::List(_) | Ty::Set(_)) => Ok(Ty::Set(s)),
                    _ => Err(misuse(pos, "`intersect` needs two node sets or two value collections")),
                }
            }
            "equals" => {
                if args.len() != 1 {
                    return Err(syntax(pos, "`equals` takes one argument"));
                }
                self.check(&args[0])?;
                Ok(Ty::Scalar(STy::Bool))
            }
            "matches" => {
                let s = elem(rt);
                if !matches!(rt, Ty::List(_) | Ty::Scalar(_) | Ty::Any) || !matches!(s, STy::Str | STy::Any) {
                    return Err(misuse(pos, "`matches` applies to string values"));
                }
                self.regex_arg(args, name, pos)?;
                Ok(Ty::Scalar(STy::Bool))
            }
            _ => Err(QueryError {
                category: ErrorCategory::UnknownApi,
                pos,
                message: format!("`{name}` is not part of the supported query API"),
            }),
        }
    }
}

fn no_args(args: &[Expr], name: &str, pos: Pos) -> Result<(), QueryError> {
    if args.is_empty() {
        Ok(())
    } else {
        Err(syntax(pos, format!("`{name}` takes no arguments")))
    }
}
