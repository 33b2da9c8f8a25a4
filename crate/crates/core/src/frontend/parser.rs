//! Recursive-descent parser for the supported C subset.

use super::ast::{AstKind, AstNode, Span};
use super::lexer::{lex, TokKind, Token};
use super::{FrontendError, SourceUnit};
use std::collections::HashSet;

const KEYWORDS: &[&str] = &[
    "auto", "break", "case", "char", "const", "continue", "default", "do", "double", "else", "enum", "extern", "float",
    "for", "goto", "if", "inline", "int", "long", "register", "restrict", "return", "short", "signed", "sizeof",
    "static", "struct", "switch", "typedef", "union", "unsigned", "void", "volatile", "while", "_Bool", "_Complex",
];

const BASE_TYPES: &[&str] =
    &["void", "char", "short", "int", "long", "float", "double", "signed", "unsigned", "_Bool", "_Complex"];

const QUALIFIERS: &[&str] = &[
    "const",
    "volatile",
    "restrict",
    "__restrict",
    "__restrict__",
    "inline",
    "__inline",
    "__inline__",
    "static",
    "extern",
    "register",
    "auto",
    "_Noreturn",
    "__extension__",
];

const STORAGE: &[&str] = &[
    "static",
    "extern",
    "register",
    "auto",
    "inline",
    "__inline",
    "__inline__",
    "_Noreturn",
    "typedef",
    "__extension__",
];

const ASSIGN_OPS: &[&str] = &["=", "+=", "-=", "*=", "/=", "%=", "&=", "|=", "^=", "<<=", ">>="];

fn binop_prec(op: &str) -> Option<u8> {
    Some(match op {
        "||" => 1,
        "&&" => 2,
        "|" => 3,
        "^" => 4,
        "&" => 5,
        "==" | "!=" => 6,
        "<" | ">" | "<=" | ">=" => 7,
        "<<" | ">>" => 8,
        "+" | "-" => 9,
        "*" | "/" | "%" => 10,
        _ => return None,
    })
}

fn is_keyword(s: &str) -> bool {
    KEYWORDS.contains(&s)
}

/// Parse a unit into a `TranslationUnit` tree, comments included.
pub fn parse(unit: &SourceUnit) -> Result<AstNode, FrontendError> {
    if unit.text.trim().is_empty() {
        return Err(FrontendError::EmptyUnit);
    }
    let lexed = lex(&unit.text)?;
    let (comments, toks): (Vec<Token>, Vec<Token>) = lexed.tokens.into_iter().partition(|t| t.is_comment());
    let mut p = Parser::new(&unit.text, toks);
    let mut root = p.translation_unit()?;
    for c in comments {
        let node = p.leaf(AstKind::Comment, c.start, c.end, None);
        // the root accepts every comment
        insert_comment(&mut root, node);
    }
    Ok(root)
}

/// Places `c` in the innermost enclosing block; hands it back when `n` has none.
fn insert_comment(n: &mut AstNode, c: AstNode) -> Option<AstNode> {
    let idx = n.children.iter().position(|ch| ch.range.start <= c.range.start && c.range.end <= ch.range.end);
    let c = match idx {
        Some(i) => insert_comment(&mut n.children[i], c)?,
        None => c,
    };
    if matches!(n.kind, AstKind::Block | AstKind::TranslationUnit) {
        let at = n.children.partition_point(|ch| ch.range.start <= c.range.start);
        n.children.insert(at, c);
        None
    } else {
        Some(c)
    }
}

struct Parser<'a> {
    src: &'a str,
    toks: Vec<Token>,
    pos: usize,
    last_end: usize,
    line_starts: Vec<usize>,
    typedefs: HashSet<String>,
}

/// Declarator pieces gathered before deciding what kind of declaration it is.
struct Decl {
    name: Option<String>,
    name_range: Option<std::ops::Range<usize>>,
    start: usize,
    ptr: usize,
    dims: usize,
    params: Option<Vec<AstNode>>,
}

type PResult<T> = Result<T, FrontendError>;

impl<'a> Parser<'a> {
    fn new(src: &'a str, toks: Vec<Token>) -> Self {
        let mut line_starts = vec![0];
        line_starts.extend(src.match_indices('\n').map(|(i, _)| i + 1));
        Parser { src, toks, pos: 0, last_end: 0, line_starts, typedefs: HashSet::new() }
    }

    // ---------- token helpers ----------

    fn peek(&self) -> Option<&Token> {
        self.toks.get(self.pos)
    }

    fn text_at(&self, k: usize) -> &'a str {
        self.toks.get(self.pos + k).map(|t| t.text(self.src)).unwrap_or("")
    }

    fn kind_at(&self, k: usize) -> Option<TokKind> {
        self.toks.get(self.pos + k).map(|t| t.kind)
    }

    fn is_punct_at(&self, k: usize, p: &str) -> bool {
        self.kind_at(k) == Some(TokKind::Punct) && self.text_at(k) == p
    }

    fn is_punct(&self, p: &str) -> bool {
        self.is_punct_at(0, p)
    }

    fn is_word(&self, w: &str) -> bool {
        self.kind_at(0) == Some(TokKind::Ident) && self.text_at(0) == w
    }

    fn is_ident_at(&self, k: usize) -> bool {
        self.kind_at(k) == Some(TokKind::Ident) && !is_keyword(self.text_at(k))
    }

    fn bump(&mut self) -> Token {
        let t = self.toks[self.pos].clone();
        self.pos += 1;
        self.last_end = t.end;
        t
    }

    fn eat_punct(&mut self, p: &str) -> bool {
        if self.is_punct(p) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn eat_word(&mut self, w: &str) -> bool {
        if self.is_word(w) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn cur_start(&self) -> usize {
        self.peek().map(|t| t.start).unwrap_or(self.src.len())
    }

    fn err(&self, message: impl Into<String>) -> FrontendError {
        match self.peek() {
            Some(t) => FrontendError::Syntax {
                line: t.line,
                column: t.col,
                token: t.text(self.src).to_string(),
                message: message.into(),
            },
            None => {
                let line = self.toks.last().map(|t| t.end_line).unwrap_or(1);
                FrontendError::Syntax { line, column: 0, token: "<eof>".into(), message: message.into() }
            }
        }
    }

    fn unsupported(&self, message: impl Into<String>) -> FrontendError {
        let (line, column, construct) = match self.peek() {
            Some(t) => (t.line, t.col, t.text(self.src).to_string()),
            None => (self.toks.last().map(|t| t.end_line).unwrap_or(1), 0, "<eof>".into()),
        };
        FrontendError::Unsupported { line, column, construct, message: message.into() }
    }

    fn expect_punct(&mut self, p: &str) -> PResult<Token> {
        if self.is_punct(p) {
            Ok(self.bump())
        } else {
            Err(self.err(format!("expected `{p}`")))
        }
    }

    fn expect_ident(&mut self) -> PResult<Token> {
        if self.is_ident_at(0) {
            Ok(self.bump())
        } else {
            Err(self.err("expected identifier"))
        }
    }

    // ---------- node construction ----------

    fn line_of(&self, byte: usize) -> u32 {
        self.line_starts.partition_point(|s| *s <= byte) as u32
    }

    fn leaf(&self, kind: AstKind, start: usize, end: usize, name: Option<String>) -> AstNode {
        self.node_range(kind, start, end, name, Vec::new())
    }

    fn node_range(
        &self,
        kind: AstKind,
        start: usize,
        end: usize,
        name: Option<String>,
        children: Vec<AstNode>,
    ) -> AstNode {
        let end_line = if end > start { self.line_of(end - 1) } else { self.line_of(start) };
        AstNode {
            kind,
            name,
            name_range: None,
            detail: None,
            children,
            span: Span { start_line: self.line_of(start), end_line },
            range: start..end,
            code: self.src[start..end].to_string(),
        }
    }

    fn node(&self, kind: AstKind, start: usize, name: Option<String>, children: Vec<AstNode>) -> AstNode {
        self.node_range(kind, start, self.last_end, name, children)
    }

    fn ident_node(&self, t: &Token) -> AstNode {
        let mut n = self.leaf(AstKind::Identifier, t.start, t.end, Some(t.text(self.src).into()));
        n.name_range = Some(t.start..t.end);
        n
    }

    fn empty_at(&self, pos: usize) -> AstNode {
        self.leaf(AstKind::Empty, pos, pos, None)
    }

    // ---------- top level ----------

    fn translation_unit(&mut self) -> PResult<AstNode> {
        let mut items = Vec::new();
        while let Some(t) = self.peek() {
            match t.kind {
                TokKind::Directive => items.push(self.directive()),
                TokKind::Punct if self.is_punct(";") => {
                    self.bump();
                }
                TokKind::Ident => items.push(self.declaration(true)?),
                _ => return Err(self.err("expected a declaration or function definition")),
            }
        }
        Ok(self.node_range(AstKind::TranslationUnit, 0, self.src.len(), None, items))
    }

    fn directive(&mut self) -> AstNode {
        let t = self.bump();
        let text = t.text(self.src);
        let end = t.start + text.trim_end().len();
        self.leaf(AstKind::Directive, t.start, end, None)
    }

    fn skip_attributes(&mut self) -> PResult<()> {
        while self.is_word("__attribute__") || self.is_word("__declspec") {
            self.bump();
            self.expect_punct("(")?;
            self.skip_balanced_after_open("(", ")")?;
        }
        Ok(())
    }

    /// With the opening delimiter already consumed, skip to its match.
    fn skip_balanced_after_open(&mut self, open: &str, close: &str) -> PResult<()> {
        let mut depth = 1;
        while depth > 0 {
            if self.peek().is_none() {
                return Err(self.err(format!("expected `{close}`")));
            }
            if self.is_punct(open) {
                depth += 1;
            } else if self.is_punct(close) {
                depth -= 1;
            }
            self.bump();
        }
        Ok(())
    }

    /// Parse declaration specifiers. Returns (normalized type text, is_typedef)
    /// or `None` when no specifier is present.
    fn specifiers(&mut self) -> PResult<Option<(String, bool)>> {
        let start = self.cur_start();
        let mut saw_base = false;
        let mut is_typedef = false;
        let mut any = false;
        loop {
            self.skip_attributes()?;
            if self.kind_at(0) != Some(TokKind::Ident) {
                break;
            }
            let w = self.text_at(0);
            if w == "typedef" {
                is_typedef = true;
            } else if QUALIFIERS.contains(&w) {
            } else if BASE_TYPES.contains(&w) {
                saw_base = true;
            } else if matches!(w, "struct" | "union" | "enum") {
                self.bump();
                self.skip_attributes()?;
                if self.is_ident_at(0) {
                    self.bump();
                }
                if self.eat_punct("{") {
                    self.skip_balanced_after_open("{", "}")?;
                }
                saw_base = true;
                any = true;
                continue;
            } else if !is_keyword(w) && !saw_base {
                saw_base = true;
            } else {
                break;
            }
            self.bump();
            any = true;
        }
        if !any {
            return Ok(None);
        }
        let text = &self.src[start..self.last_end];
        Ok(Some((normalize_type(text), is_typedef)))
    }

    fn declarator(&mut self, abstract_ok: bool) -> PResult<Decl> {
        let start = self.cur_start();
        let mut ptr = 0;
        loop {
            self.skip_attributes()?;
            if self.eat_punct("*") {
                ptr += 1;
            } else if self.kind_at(0) == Some(TokKind::Ident) && QUALIFIERS.contains(&self.text_at(0)) {
                self.bump();
            } else {
                break;
            }
        }
        if self.is_punct("(") {
            return Err(if self.is_punct_at(1, "*") || self.is_punct_at(1, "^") {
                self.unsupported("function pointer declarator")
            } else {
                self.unsupported("unexpanded macro or parenthesized declarator")
            });
        }
        let (name, name_range) = if self.is_ident_at(0) {
            let t = self.bump();
            (Some(t.text(self.src).to_string()), Some(t.start..t.end))
        } else if abstract_ok {
            (None, None)
        } else {
            return Err(self.err("expected declarator name"));
        };
        let mut dims = 0;
        while self.eat_punct("[") {
            self.skip_balanced_after_open("[", "]")?;
            dims += 1;
        }
        let params = if self.is_punct("(") { Some(self.parameter_list()?) } else { None };
        self.skip_attributes()?;
        Ok(Decl { name, name_range, start, ptr, dims, params })
    }

    fn parameter_list(&mut self) -> PResult<Vec<AstNode>> {
        self.expect_punct("(")?;
        let mut params = Vec::new();
        if self.eat_punct(")") {
            return Ok(params);
        }
        if self.is_word("void") && self.is_punct_at(1, ")") {
            self.bump();
            self.bump();
            return Ok(params);
        }
        loop {
            let start = self.cur_start();
            if self.eat_punct("...") {
                params.push(self.node(AstKind::ParamDecl, start, None, Vec::new()));
            } else {
                let Some((ty, _)) = self.specifiers()? else {
                    return Err(self.err("expected parameter type"));
                };
                let d = self.declarator(true)?;
                if d.params.is_some() {
                    return Err(self.unsupported("function-typed parameter"));
                }
                let mut n = self.node(AstKind::ParamDecl, start, d.name.clone(), Vec::new());
                n.name_range = d.name_range;
                n.detail = Some(full_type(&ty, d.ptr, d.dims));
                params.push(n);
            }
            if self.eat_punct(",") {
                continue;
            }
            self.expect_punct(")")?;
            return Ok(params);
        }
    }

    fn declaration(&mut self, top_level: bool) -> PResult<AstNode> {
        let start = self.cur_start();
        let Some((ty, is_typedef)) = self.specifiers()? else {
            return Err(self.err("expected declaration"));
        };
        if self.eat_punct(";") {
            return Ok(self.node(AstKind::TypeDecl, start, None, Vec::new()));
        }
        let mut declarators = Vec::new();
        let mut first_fn: Option<Decl> = None;
        loop {
            let d = self.declarator(false)?;
            if is_typedef {
                if let Some(n) = &d.name {
                    self.typedefs.insert(n.clone());
                }
            }
            if d.params.is_some() && self.is_punct("{") {
                if !top_level || !declarators.is_empty() || is_typedef {
                    return Err(self.unsupported("nested function definition"));
                }
                return self.function_def(start, &ty, d);
            }
            if d.params.is_some() && declarators.is_empty() && !self.is_punct(",") {
                first_fn = Some(d);
                break;
            }
            let mut children = vec![];
            if let (Some(n), Some(r)) = (&d.name, &d.name_range) {
                let mut id = self.leaf(AstKind::Identifier, r.start, r.end, Some(n.clone()));
                id.name_range = Some(r.clone());
                children.push(id);
            }
            if self.eat_punct("=") {
                children.push(self.initializer()?);
            }
            let mut dn = self.node_range(AstKind::Declarator, d.start, self.last_end, d.name.clone(), children);
            dn.name_range = d.name_range.clone();
            dn.detail = Some(full_type(&ty, d.ptr, d.dims));
            declarators.push(dn);
            if !self.eat_punct(",") {
                break;
            }
        }
        if self.is_punct("{") {
            return Err(self.unsupported("unexpanded macro before block"));
        }
        self.expect_punct(";")?;
        if is_typedef {
            return Ok(self.node(AstKind::TypeDecl, start, None, Vec::new()));
        }
        if let Some(d) = first_fn {
            let mut n = self.node(AstKind::FunctionDecl, start, d.name, d.params.unwrap_or_default());
            n.name_range = d.name_range;
            n.detail = Some(full_type(&ty, d.ptr, 0));
            return Ok(n);
        }
        let mut n = self.node(AstKind::VarDecl, start, None, declarators);
        n.detail = Some(ty);
        Ok(n)
    }

    fn function_def(&mut self, start: usize, ty: &str, d: Decl) -> PResult<AstNode> {
        let mut children = d.params.unwrap_or_default();
        children.push(self.block()?);
        let mut n = self.node(AstKind::FunctionDef, start, d.name, children);
        n.name_range = d.name_range;
        n.detail = Some(full_type(ty, d.ptr, 0));
        Ok(n)
    }

    fn initializer(&mut self) -> PResult<AstNode> {
        if self.is_punct("{") {
            self.init_list()
        } else {
            self.assign()
        }
    }

    fn init_list(&mut self) -> PResult<AstNode> {
        let start = self.cur_start();
        self.expect_punct("{")?;
        let mut elems = Vec::new();
        while !self.is_punct("}") {
            // designators are skipped: `.f =` / `[i] =`
            if self.is_punct(".") && self.is_ident_at(1) && self.is_punct_at(2, "=") {
                self.bump();
                self.bump();
                self.bump();
            } else if self.is_punct("[") {
                let save = self.pos;
                self.bump();
                self.skip_balanced_after_open("[", "]")?;
                if !self.eat_punct("=") {
                    self.pos = save;
                    return Err(self.err("expected designator `=`"));
                }
            }
            elems.push(self.initializer()?);
            if !self.eat_punct(",") {
                break;
            }
        }
        self.expect_punct("}")?;
        Ok(self.node(AstKind::InitList, start, Some("{}".into()), elems))
    }

    // ---------- statements ----------

    fn looks_like_decl(&self) -> bool {
        if self.kind_at(0) != Some(TokKind::Ident) {
            return false;
        }
        let w = self.text_at(0);
        if BASE_TYPES.contains(&w)
            || QUALIFIERS.contains(&w)
            || matches!(w, "struct" | "union" | "enum" | "typedef" | "__attribute__")
        {
            return true;
        }
        if is_keyword(w) {
            return false;
        }
        if self.is_ident_at(1) {
            return true;
        }
        if self.typedefs.contains(w) && self.is_punct_at(1, "*") {
            return true;
        }
        if self.is_punct_at(1, "*") {
            let mut k = 1;
            while self.is_punct_at(k, "*") {
                k += 1;
            }
            if self.kind_at(k) == Some(TokKind::Ident) && QUALIFIERS.contains(&self.text_at(k)) {
                return true;
            }
            return self.is_ident_at(k) && [";", "=", ",", "[", ")"].iter().any(|p| self.is_punct_at(k + 1, p));
        }
        false
    }

    fn block(&mut self) -> PResult<AstNode> {
        let start = self.cur_start();
        self.expect_punct("{")?;
        let mut items = Vec::new();
        while !self.is_punct("}") {
            if self.peek().is_none() {
                return Err(self.err("expected `}`"));
            }
            items.push(self.statement()?);
        }
        self.bump();
        Ok(self.node(AstKind::Block, start, None, items))
    }

    fn paren_expr(&mut self) -> PResult<AstNode> {
        self.expect_punct("(")?;
        let e = self.expr()?;
        self.expect_punct(")")?;
        Ok(e)
    }

    fn statement(&mut self) -> PResult<AstNode> {
        let start = self.cur_start();
        let Some(t) = self.peek() else {
            return Err(self.err("expected statement"));
        };
        if t.kind == TokKind::Directive {
            return Ok(self.directive());
        }
        if self.is_punct("{") {
            return self.block();
        }
        if self.is_punct(";") {
            self.bump();
            return Ok(self.node(AstKind::Empty, start, None, Vec::new()));
        }
        if t.kind == TokKind::Ident {
            let w = self.text_at(0);
            match w {
                "if" => {
                    self.bump();
                    let cond = self.paren_expr()?;
                    let then = self.statement()?;
                    let mut ch = vec![cond, then];
                    if self.eat_word("else") {
                        ch.push(self.statement()?);
                    }
                    return Ok(self.node(AstKind::If, start, Some("if".into()), ch));
                }
                "while" => {
                    self.bump();
                    let cond = self.paren_expr()?;
                    let body = self.statement()?;
                    return Ok(self.node(AstKind::While, start, Some("while".into()), vec![cond, body]));
                }
                "do" => {
                    self.bump();
                    let body = self.statement()?;
                    if !self.eat_word("while") {
                        return Err(self.err("expected `while` after do-body"));
                    }
                    let cond = self.paren_expr()?;
                    self.expect_punct(";")?;
                    return Ok(self.node(AstKind::DoWhile, start, Some("do".into()), vec![body, cond]));
                }
                "for" => return self.for_stmt(start),
                "switch" => {
                    self.bump();
                    let cond = self.paren_expr()?;
                    let body = self.statement()?;
                    return Ok(self.node(AstKind::Switch, start, Some("switch".into()), vec![cond, body]));
                }
                "case" => {
                    self.bump();
                    let v = self.conditional()?;
                    if self.eat_punct("...") {
                        return Err(self.unsupported("case range"));
                    }
                    self.expect_punct(":")?;
                    return Ok(self.node(AstKind::Case, start, Some("case".into()), vec![v]));
                }
                "default" => {
                    self.bump();
                    self.expect_punct(":")?;
                    return Ok(self.node(AstKind::Case, start, Some("default".into()), Vec::new()));
                }
                "goto" => {
                    self.bump();
                    let l = self.expect_ident()?;
                    self.expect_punct(";")?;
                    let mut n = self.node(AstKind::Goto, start, Some(l.text(self.src).into()), Vec::new());
                    n.name_range = Some(l.start..l.end);
                    return Ok(n);
                }
                "break" | "continue" => {
                    self.bump();
                    self.expect_punct(";")?;
                    let k = if w == "break" { AstKind::Break } else { AstKind::Continue };
                    return Ok(self.node(k, start, Some(w.into()), Vec::new()));
                }
                "return" => {
                    self.bump();
                    let mut ch = Vec::new();
                    if !self.is_punct(";") {
                        ch.push(self.expr()?);
                    }
                    self.expect_punct(";")?;
                    return Ok(self.node(AstKind::Return, start, Some("return".into()), ch));
                }
                "else" => return Err(self.err("`else` without matching `if`")),
                _ => {}
            }
            if self.is_ident_at(0) && self.is_punct_at(1, ":") {
                let l = self.bump();
                self.bump();
                let mut n = self.node(AstKind::Label, start, Some(l.text(self.src).into()), Vec::new());
                n.name_range = Some(l.start..l.end);
                return Ok(n);
            }
            if self.looks_like_decl() {
                return self.declaration(false);
            }
        }
        let e = self.expr()?;
        if self.is_punct("{") {
            return Err(self.unsupported("unexpanded macro followed by a block"));
        }
        self.expect_punct(";")?;
        Ok(self.node(AstKind::ExprStmt, start, None, vec![e]))
    }

    fn for_stmt(&mut self, start: usize) -> PResult<AstNode> {
        self.bump();
        self.expect_punct("(")?;
        let init = if self.is_punct(";") {
            let e = self.empty_at(self.cur_start());
            self.bump();
            e
        } else if self.looks_like_decl() {
            self.declaration(false)?
        } else {
            let e = self.expr()?;
            self.expect_punct(";")?;
            e
        };
        let cond = if self.is_punct(";") { self.empty_at(self.cur_start()) } else { self.expr()? };
        self.expect_punct(";")?;
        let step = if self.is_punct(")") { self.empty_at(self.cur_start()) } else { self.expr()? };
        self.expect_punct(")")?;
        let body = self.statement()?;
        Ok(self.node(AstKind::For, start, Some("for".into()), vec![init, cond, step, body]))
    }

    // ---------- expressions ----------

    fn expr(&mut self) -> PResult<AstNode> {
        let start = self.cur_start();
        let mut lhs = self.assign()?;
        while self.eat_punct(",") {
            let rhs = self.assign()?;
            lhs = self.node(AstKind::BinaryOp, start, Some(",".into()), vec![lhs, rhs]);
        }
        Ok(lhs)
    }

    fn assign(&mut self) -> PResult<AstNode> {
        let start = self.cur_start();
        let lhs = self.conditional()?;
        if self.kind_at(0) == Some(TokKind::Punct) && ASSIGN_OPS.contains(&self.text_at(0)) {
            let op = self.bump().text(self.src).to_string();
            let rhs = self.assign()?;
            return Ok(self.node(AstKind::Assign, start, Some(op), vec![lhs, rhs]));
        }
        Ok(lhs)
    }

    fn conditional(&mut self) -> PResult<AstNode> {
        let start = self.cur_start();
        let c = self.binary(1)?;
        if self.eat_punct("?") {
            let a = self.expr()?;
            self.expect_punct(":")?;
            let b = self.conditional()?;
            return Ok(self.node(AstKind::Conditional, start, Some("?:".into()), vec![c, a, b]));
        }
        Ok(c)
    }

    fn binary(&mut self, min_prec: u8) -> PResult<AstNode> {
        let start = self.cur_start();
        let mut lhs = self.unary()?;
        loop {
            if self.kind_at(0) != Some(TokKind::Punct) {
                break;
            }
            let op = self.text_at(0);
            let Some(prec) = binop_prec(op) else { break };
            if prec < min_prec {
                break;
            }
            self.bump();
            let rhs = self.binary(prec + 1)?;
            lhs = self.node(AstKind::BinaryOp, start, Some(op.into()), vec![lhs, rhs]);
        }
        Ok(lhs)
    }

    fn type_starts_at(&self, k: usize, lenient: bool) -> bool {
        if self.kind_at(k) != Some(TokKind::Ident) {
            return false;
        }
        let w = self.text_at(k);
        if BASE_TYPES.contains(&w) || QUALIFIERS.contains(&w) || matches!(w, "struct" | "union" | "enum") {
            return true;
        }
        if is_keyword(w) {
            return false;
        }
        if self.typedefs.contains(w) {
            return true;
        }
        let mut j = k + 1;
        if self.is_punct_at(j, "*") {
            while self.is_punct_at(j, "*") {
                j += 1;
            }
            return self.is_punct_at(j, ")");
        }
        if lenient && self.is_punct_at(j, ")") {
            // `(T) x` — a following operand start means a cast.
            return matches!(
                self.kind_at(j + 1),
                Some(TokKind::Ident | TokKind::Number | TokKind::Char | TokKind::Str)
            ) && !(self.kind_at(j + 1) == Some(TokKind::Ident)
                && is_keyword(self.text_at(j + 1))
                && self.text_at(j + 1) != "sizeof");
        }
        false
    }

    /// With `(` already consumed, read a type name up to the matching `)`.
    fn type_name(&mut self) -> PResult<String> {
        let start = self.cur_start();
        let mut depth = 0;
        loop {
            if self.peek().is_none() {
                return Err(self.err("expected `)`"));
            }
            if self.is_punct("(") {
                depth += 1;
            } else if self.is_punct(")") {
                if depth == 0 {
                    break;
                }
                depth -= 1;
            }
            self.bump();
        }
        let text = self.src[start..self.last_end].to_string();
        self.bump();
        Ok(normalize_type(&text))
    }

    fn unary(&mut self) -> PResult<AstNode> {
        let start = self.cur_start();
        if self.kind_at(0) == Some(TokKind::Punct) {
            let op = self.text_at(0);
            match op {
                "++" | "--" => {
                    self.bump();
                    let e = self.unary()?;
                    let mut n = self.node(AstKind::UnaryOp, start, Some(op.into()), vec![e]);
                    n.detail = Some("prefix".into());
                    return Ok(n);
                }
                "+" | "-" | "!" | "~" | "*" | "&" => {
                    self.bump();
                    let e = self.unary()?;
                    return Ok(self.node(AstKind::UnaryOp, start, Some(op.into()), vec![e]));
                }
                "(" if self.type_starts_at(1, true) => {
                    self.bump();
                    let ty = self.type_name()?;
                    let e = if self.is_punct("{") { self.init_list()? } else { self.unary()? };
                    let mut n = self.node(AstKind::Cast, start, Some("cast".into()), vec![e]);
                    n.detail = Some(ty);
                    return Ok(n);
                }
                _ => {}
            }
        }
        if self.is_word("sizeof") {
            self.bump();
            if self.is_punct("(") && self.type_starts_at(1, false) {
                self.bump();
                let ty = self.type_name()?;
                let mut n = self.node(AstKind::UnaryOp, start, Some("sizeof".into()), Vec::new());
                n.detail = Some(ty);
                return Ok(n);
            }
            let e = self.unary()?;
            return Ok(self.node(AstKind::UnaryOp, start, Some("sizeof".into()), vec![e]));
        }
        self.postfix()
    }

    fn postfix(&mut self) -> PResult<AstNode> {
        let start = self.cur_start();
        let mut e = self.primary()?;
        loop {
            if self.is_punct("(") {
                self.bump();
                let mut ch = vec![];
                let name = match e.kind {
                    AstKind::Identifier | AstKind::Member => e.name.clone(),
                    _ => Some(e.code.clone()),
                };
                ch.push(e);
                if !self.is_punct(")") {
                    loop {
                        ch.push(self.assign()?);
                        if !self.eat_punct(",") {
                            break;
                        }
                    }
                }
                self.expect_punct(")")?;
                e = self.node(AstKind::Call, start, name, ch);
            } else if self.is_punct("[") {
                self.bump();
                let idx = self.expr()?;
                self.expect_punct("]")?;
                e = self.node(AstKind::Index, start, Some("[]".into()), vec![e, idx]);
            } else if self.is_punct(".") || self.is_punct("->") {
                let op = self.bump().text(self.src).to_string();
                let f = self.expect_ident()?;
                let mut n = self.node(AstKind::Member, start, Some(f.text(self.src).into()), vec![e]);
                n.name_range = Some(f.start..f.end);
                n.detail = Some(op);
                e = n;
            } else if self.is_punct("++") || self.is_punct("--") {
                let op = self.bump().text(self.src).to_string();
                let mut n = self.node(AstKind::UnaryOp, start, Some(op), vec![e]);
                n.detail = Some("postfix".into());
                e = n;
            } else {
                break;
            }
        }
        Ok(e)
    }

    fn primary(&mut self) -> PResult<AstNode> {
        let start = self.cur_start();
        match self.kind_at(0) {
            Some(TokKind::Ident) if self.is_ident_at(0) => {
                let t = self.bump();
                Ok(self.ident_node(&t))
            }
            Some(TokKind::Number | TokKind::Char) => {
                let t = self.bump();
                Ok(self.leaf(AstKind::Literal, t.start, t.end, Some(t.text(self.src).into())))
            }
            Some(TokKind::Str) => {
                while self.kind_at(0) == Some(TokKind::Str) {
                    self.bump();
                }
                let text = self.src[start..self.last_end].to_string();
                Ok(self.node(AstKind::Literal, start, Some(text), Vec::new()))
            }
            Some(TokKind::Punct) if self.is_punct("(") => {
                if self.is_punct_at(1, "{") {
                    return Err(self.unsupported("statement expression"));
                }
                self.bump();
                let e = self.expr()?;
                self.expect_punct(")")?;
                Ok(e)
            }
            _ => Err(self.err("expected expression")),
        }
    }
}

fn normalize_type(text: &str) -> String {
    text.split_whitespace().filter(|w| !STORAGE.contains(w)).collect::<Vec<_>>().join(" ")
}

fn full_type(base: &str, ptr: usize, dims: usize) -> String {
    let mut s = base.to_string();
    s.push_str(&"*".repeat(ptr));
    s.push_str(&"[]".repeat(dims));
    s
}
