//! Semantics-preserving source transformations T1–T4.
//!
//! All four keep every original line at its original line number: renames are
//! in place, T2's guard block and T3's forwarding wrapper are inserted on an
//! existing line. The provenance map is therefore the identity, but it is still
//! emitted so callers need not rely on that.

use crate::frontend::{parse, strip_comments, AstKind, AstNode, FrontendError, SourceUnit};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::ops::Range;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TransformId {
    T1,
    T2,
    T3,
    T4,
}

impl TransformId {
    pub const ALL: [TransformId; 4] = [TransformId::T1, TransformId::T2, TransformId::T3, TransformId::T4];
}

impl fmt::Display for TransformId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for TransformId {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "T1" => Ok(TransformId::T1),
            "T2" => Ok(TransformId::T2),
            "T3" => Ok(TransformId::T3),
            "T4" => Ok(TransformId::T4),
            _ => Err(format!("unknown transform `{s}` (expected T1..T4)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransformSpec {
    pub id: TransformId,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TransformError {
    #[error(transparent)]
    Frontend(#[from] FrontendError),
}

/// A function left untouched by T3.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkipTransform {
    pub function: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransformOutput {
    pub unit: SourceUnit,
    /// `(old line, new line)` for every original line.
    pub line_map: Vec<(u32, u32)>,
    pub skipped: Vec<SkipTransform>,
}

impl TransformOutput {
    fn same_lines(orig: &SourceUnit, unit: SourceUnit, skipped: Vec<SkipTransform>) -> Self {
        let n = orig.text.lines().count() as u32;
        TransformOutput { unit, line_map: (1..=n).map(|l| (l, l)).collect(), skipped }
    }
}

pub fn apply(spec: TransformSpec, unit: &SourceUnit) -> Result<TransformOutput, TransformError> {
    match spec.id {
        TransformId::T1 => t1_rename_params(unit, spec.seed),
        TransformId::T2 => t2_insert_dead(unit, spec.seed),
        TransformId::T3 => t3_extract_function(unit, spec.seed),
        TransformId::T4 => Ok(t4_remove_comments(unit)),
    }
}

fn splice(text: &str, mut edits: Vec<(Range<usize>, String)>) -> String {
    edits.sort_by_key(|(r, _)| (r.start, r.end));
    let mut out = String::with_capacity(text.len() + 64);
    let mut at = 0;
    for (r, s) in edits {
        out.push_str(&text[at..r.start]);
        out.push_str(&s);
        at = r.end;
    }
    out.push_str(&text[at..]);
    out
}

/// Fresh identifiers: a lowercase letter followed by four lowercase
/// alphanumerics, never colliding with any word already in the text.
struct Fresh {
    rng: ChaCha8Rng,
    taken: HashSet<String>,
}

impl Fresh {
    fn new(text: &str, seed: u64) -> Self {
        let words = Regex::new(r"[A-Za-z_][A-Za-z0-9_]*").expect("static regex");
        Fresh {
            rng: ChaCha8Rng::seed_from_u64(seed),
            taken: words.find_iter(text).map(|m| m.as_str().to_string()).collect(),
        }
    }

    fn token(&mut self) -> String {
        const ALNUM: &[u8] = b"abcdefghijklmnopqrstuvwxyz0123456789";
        loop {
            let mut s = String::with_capacity(5);
            s.push((b'a' + self.rng.random_range(0..26u8)) as char);
            for _ in 0..4 {
                s.push(ALNUM[self.rng.random_range(0..ALNUM.len())] as char);
            }
            if self.taken.insert(s.clone()) {
                return s;
            }
        }
    }
}

/// Identifier occurrences in `body` that resolve to one of `params`. Blocks
/// and `for` headers open scopes; a declarator shadows from its own name on.
fn param_uses<'a>(body: &'a AstNode, params: &HashSet<&str>) -> Vec<&'a AstNode> {
    fn visit<'a>(
        n: &'a AstNode,
        params: &HashSet<&str>,
        scopes: &mut Vec<HashSet<&'a str>>,
        out: &mut Vec<&'a AstNode>,
    ) {
        match n.kind {
            AstKind::Identifier => {
                if params.contains(n.name()) && !scopes.iter().any(|s| s.contains(n.name())) {
                    out.push(n);
                }
            }
            AstKind::Block | AstKind::For => {
                scopes.push(HashSet::new());
                for c in &n.children {
                    visit(c, params, scopes, out);
                }
                scopes.pop();
            }
            AstKind::Declarator => {
                if let Some(s) = scopes.last_mut() {
                    s.insert(n.name());
                }
                for c in n.children.iter().skip(1) {
                    visit(c, params, scopes, out);
                }
            }
            _ => {
                for c in &n.children {
                    visit(c, params, scopes, out);
                }
            }
        }
    }
    let mut out = Vec::new();
    visit(body, params, &mut Vec::new(), &mut out);
    out
}

/// T1: every named parameter and its uses get a fresh random token.
pub fn t1_rename_params(unit: &SourceUnit, seed: u64) -> Result<TransformOutput, TransformError> {
    let ast = parse(unit)?;
    let mut fresh = Fresh::new(&unit.text, seed);
    let mut edits = Vec::new();
    for f in ast.functions() {
        let Some(body) = f.body() else { continue };
        let mut renames: HashMap<&str, String> = HashMap::new();
        for p in f.params() {
            if let (Some(name), Some(r)) = (p.name.as_deref(), p.name_range.clone()) {
                let tok = fresh.token();
                edits.push((r, tok.clone()));
                renames.insert(name, tok);
            }
        }
        let names: HashSet<&str> = renames.keys().copied().collect();
        for id in param_uses(body, &names) {
            edits.push((id.range.clone(), renames[id.name()].clone()));
        }
    }
    let text = splice(&unit.text, edits);
    Ok(TransformOutput::same_lines(unit, unit.with_text(text), vec![]))
}

/// End offsets of statements in a function body after which a new statement
/// may be placed on the same line.
fn boundaries(body: &AstNode) -> Vec<usize> {
    let mut v = vec![body.range.start + 1];
    for c in &body.children {
        if !matches!(c.kind, AstKind::Comment | AstKind::Directive) {
            v.push(c.range.end);
        }
    }
    v
}

/// T2: one constant-false guarded block per function, at a seeded boundary.
pub fn t2_insert_dead(unit: &SourceUnit, seed: u64) -> Result<TransformOutput, TransformError> {
    let ast = parse(unit)?;
    let mut fresh = Fresh::new(&unit.text, seed);
    let mut edits = Vec::new();
    for f in ast.functions() {
        let Some(body) = f.body() else { continue };
        let b = boundaries(body);
        let at = b[fresh.rng.random_range(0..b.len())];
        let lo: u32 = fresh.rng.random_range(0..50);
        let hi: u32 = fresh.rng.random_range(lo + 1..100);
        let var = fresh.token();
        edits.push((at..at, format!(" if ({lo} > {hi}) {{ int {var} = {lo}; }}")));
    }
    let text = splice(&unit.text, edits);
    Ok(TransformOutput::same_lines(unit, unit.with_text(text), vec![]))
}

/// T3: `f` becomes `f_impl` in place and a forwarding `f` is appended right
/// after it on the same line.
pub fn t3_extract_function(unit: &SourceUnit, _seed: u64) -> Result<TransformOutput, TransformError> {
    let ast = parse(unit)?;
    let (stripped, _) = crate::frontend::strip_str(&unit.text);
    let words: HashSet<&str> = Regex::new(r"[A-Za-z_][A-Za-z0-9_]*")
        .expect("static regex")
        .find_iter(&unit.text)
        .map(|m| m.as_str())
        .collect();
    let mut used: HashSet<String> = HashSet::new();
    let mut edits = Vec::new();
    let mut skipped = Vec::new();
    for f in ast.functions() {
        let (Some(body), Some(name_r)) = (f.body(), f.name_range.clone()) else { continue };
        let name = f.name();
        let skip = |reason: &str| SkipTransform { function: name.to_string(), reason: reason.to_string() };
        if f.is_variadic() {
            skipped.push(skip("variadic signature"));
            continue;
        }
        let params: Vec<&AstNode> = f.params().collect();
        if params.iter().any(|p| p.name.is_none()) {
            skipped.push(skip("unnamed parameter"));
            continue;
        }
        let mut target = format!("{name}_impl");
        let mut k = 2;
        while words.contains(target.as_str()) || used.contains(&target) {
            target = format!("{name}_impl{k}");
            k += 1;
        }
        used.insert(target.clone());
        let header = stripped[f.range.start..body.range.start].split_whitespace().collect::<Vec<_>>().join(" ");
        let args = params.iter().map(|p| p.name()).collect::<Vec<_>>().join(", ");
        let call = format!("{target}({args})");
        let fwd = if f.detail.as_deref() == Some("void") { format!("{call};") } else { format!("return {call};") };
        edits.push((name_r, target.clone()));
        edits.push((body.range.end..body.range.end, format!(" {header}{{{fwd}}}")));
    }
    let text = splice(&unit.text, edits);
    Ok(TransformOutput::same_lines(unit, unit.with_text(text), skipped))
}

/// T4: comment removal (comment bytes become spaces, newlines stay).
pub fn t4_remove_comments(unit: &SourceUnit) -> TransformOutput {
    TransformOutput::same_lines(unit, strip_comments(unit), vec![])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn u(s: &str) -> SourceUnit {
        SourceUnit::new("t", s)
    }

    #[test]
    fn t1_renames_params_and_uses() {
        let out = t1_rename_params(&u("int f(int x){return x;}"), 7).unwrap();
        let re = Regex::new(r"^int f\(int ([a-z][a-z0-9]{4})\)\{return ([a-z][a-z0-9]{4});\}$").unwrap();
        let c = re.captures(&out.unit.text).unwrap_or_else(|| panic!("{}", out.unit.text));
        assert_eq!(&c[1], &c[2]);
        assert_ne!(&c[1], "x");
    }

    #[test]
    fn t1_respects_shadowing() {
        let src = "int f(int x){ int y = x; { int x = 2; y += x; } return x + y; }";
        let out = t1_rename_params(&u(src), 1).unwrap().unit.text;
        // Oracle: the inner block's `x` stays, the others change.
        assert!(out.contains("{ int x = 2; y += x; }"));
        assert_eq!(out.matches(" x").count(), 2);
    }

    #[test]
    fn t1_zero_params_is_identity() {
        let src = "void f(void){ g(); }";
        assert_eq!(t1_rename_params(&u(src), 3).unwrap().unit.text, src);
    }

    #[test]
    fn t2_inserts_constant_false_guard() {
        let out = t2_insert_dead(&u("void f(){}"), 5).unwrap().unit.text;
        let re = Regex::new(r"if \((\d+) > (\d+)\) \{ int [a-z][a-z0-9]{4} = \d+; \}").unwrap();
        let c = re.captures(&out).unwrap();
        assert!(c[1].parse::<u32>().unwrap() < c[2].parse::<u32>().unwrap());
        assert!(parse(&u(&out)).is_ok());
    }

    #[test]
    fn t3_forwards() {
        let out = t3_extract_function(&u("int f(int x){return x+1;}"), 0).unwrap();
        assert_eq!(out.unit.text, "int f_impl(int x){return x+1;} int f(int x){return f_impl(x);}");
        let v = t3_extract_function(&u("void g(int *p){ *p = 1; }"), 0).unwrap();
        assert_eq!(v.unit.text, "void g_impl(int *p){ *p = 1; } void g(int *p){g_impl(p);}");
    }

    #[test]
    fn t3_skips_variadic_only() {
        let out = t3_extract_function(&u("int v(int n, ...){return n;}\nint w(int a){return a;}"), 0).unwrap();
        assert_eq!(out.skipped.len(), 1);
        assert_eq!(out.skipped[0].function, "v");
        assert!(out.unit.text.contains("w_impl"));
        assert!(out.unit.text.starts_with("int v(int n, ...)"));
    }

    #[test]
    fn t3_keeps_gotos_local() {
        let src = "int f(int a){ if (a) goto out; a = 2; out: return a; }";
        let out = t3_extract_function(&u(src), 0).unwrap().unit;
        let g = crate::cpg::build_cpg(&parse(&out).unwrap(), &out);
        assert!(g.is_ok());
    }

    #[test]
    fn t4_strips() {
        let out = t4_remove_comments(&u("int a; // x\n/* y */ int b;\n"));
        assert!(!out.unit.text.contains("//") && !out.unit.text.contains("/*"));
        assert_eq!(out.line_map, [(1, 1), (2, 2)]);
    }

    #[test]
    fn parse_ids() {
        assert_eq!("t3".parse::<TransformId>().unwrap(), TransformId::T3);
        assert!("t9".parse::<TransformId>().is_err());
    }
}
