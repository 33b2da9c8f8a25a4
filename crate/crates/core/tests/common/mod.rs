//! Shared generators and brute-force oracles for the integration suites.
#![allow(dead_code)]

use cpgvuln::cpg::dataflow::{entry_defs, statement_accesses};
use cpgvuln::cpg::{build_cpg, CodePropertyGraph, Layer, NodeId};
use cpgvuln::frontend::{parse, SourceUnit};
use cpgvuln::harness::{ingest, DatasetRecord};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeSet;
use std::path::PathBuf;

pub const SKB_PUT_QUERY: &str = r#"val source = cpg.identifier.name("len")
val sink = cpg.call.name("skb_put").where(_.argument.order(2).codeExact("len + ring->frameoffset"))
val execution_paths = sink.reachableByFlows(source)"#;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn read_fixture(name: &str) -> String {
    std::fs::read_to_string(fixture(name)).unwrap()
}

pub fn mini_corpus() -> Vec<DatasetRecord> {
    let ing = ingest(&fixture("mini_corpus.jsonl")).unwrap();
    assert!(ing.rejects.is_empty());
    ing.records
}

/// Every bundled C source: the fixture files and the mini-corpus records.
pub fn corpus() -> Vec<SourceUnit> {
    let mut out = Vec::new();
    let mut files: Vec<_> = std::fs::read_dir(fixture(""))
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "c"))
        .collect();
    files.sort();
    for f in files {
        let name = f.file_name().unwrap().to_string_lossy().to_string();
        out.push(SourceUnit::new(name, std::fs::read_to_string(&f).unwrap()));
    }
    out.extend(mini_corpus().into_iter().map(|r| SourceUnit::new(r.id, r.code)));
    out
}

pub fn graph(u: &SourceUnit) -> CodePropertyGraph {
    build_cpg(&parse(u).unwrap(), u).unwrap()
}

pub fn graph_of(src: &str) -> (SourceUnit, CodePropertyGraph) {
    let u = SourceUnit::new("gen", src);
    let g = graph(&u);
    (u, g)
}

/// Shape of generated functions.
#[derive(Debug, Clone, Copy)]
pub struct GenOpts {
    pub max_stmts: usize,
    pub loops: bool,
    /// At most one `if` (straight-line + single branch).
    pub single_branch: bool,
    pub comments: bool,
}

impl Default for GenOpts {
    fn default() -> Self {
        GenOpts { max_stmts: 10, loops: true, single_branch: false, comments: false }
    }
}

const VARS: [&str; 4] = ["a", "b", "c", "d"];

fn pick<'a>(rng: &mut ChaCha8Rng, xs: &[&'a str]) -> &'a str {
    xs[rng.random_range(0..xs.len())]
}

fn expr(rng: &mut ChaCha8Rng, vars: &[&str]) -> String {
    match rng.random_range(0..5) {
        0 => pick(rng, vars).to_string(),
        1 => format!("{} + {}", pick(rng, vars), pick(rng, vars)),
        2 => format!("{} * {}", pick(rng, vars), rng.random_range(1..9)),
        3 => format!("g({}, {})", pick(rng, vars), pick(rng, vars)),
        _ => rng.random_range(0..100).to_string(),
    }
}

/// One function of at most `max_stmts` statements over params `p`, `q` and
/// locals `a`..`d`, one statement per line.
pub fn gen_function(seed: u64, opts: GenOpts) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let all: Vec<&str> = ["p", "q"].into_iter().chain(VARS).collect();
    let mut lines = vec!["int f(int p, int q)".to_string(), "{".to_string()];
    lines.push("    int a = p, b = q, c = 0, d = 1;".into());
    let n = rng.random_range(1..=opts.max_stmts.max(1));
    let mut branched = false;
    let mut i = 0;
    while i < n {
        let left = n - i;
        let kind = rng.random_range(0..10);
        let comment = if opts.comments && rng.random_bool(0.3) { " /* note */" } else { "" };
        if kind < 5 || left < 3 {
            lines.push(format!("    {} = {};{comment}", pick(&mut rng, &VARS), expr(&mut rng, &all)));
            i += 1;
        } else if kind < 7 {
            lines.push(format!("    sink({});{comment}", pick(&mut rng, &all)));
            i += 1;
        } else if kind < 9 && !(opts.single_branch && branched) {
            branched = true;
            let c = pick(&mut rng, &all);
            lines.push(format!("    if ({c} > {}) {{", rng.random_range(0..10)));
            lines.push(format!("        {} = {};", pick(&mut rng, &VARS), expr(&mut rng, &all)));
            if rng.random_bool(0.5) {
                lines.push("    } else {".into());
                lines.push(format!("        {} = {};", pick(&mut rng, &VARS), expr(&mut rng, &all)));
            }
            lines.push("    }".into());
            i += 2;
        } else if opts.loops {
            let v = pick(&mut rng, &VARS);
            lines.push(format!("    while ({v} < {}) {{", rng.random_range(1..20)));
            lines.push(format!("        {v} = {v} + {};", pick(&mut rng, &all)));
            lines.push("    }".into());
            i += 2;
        } else {
            lines.push(format!("    {} = {};", pick(&mut rng, &VARS), expr(&mut rng, &all)));
            i += 1;
        }
    }
    if opts.comments {
        lines.insert(0, "// generated".into());
    }
    lines.push(format!("    return {};", pick(&mut rng, &VARS)));
    lines.push("}".into());
    lines.join("\n") + "\n"
}

/// All simple DDG paths from a source to a target (a lone source that is also
/// a target counts), by unpruned depth-first search.
pub fn brute_flows(g: &CodePropertyGraph, sources: &[NodeId], targets: &[NodeId]) -> BTreeSet<Vec<NodeId>> {
    fn dfs(g: &CodePropertyGraph, path: &mut Vec<NodeId>, targets: &BTreeSet<NodeId>, out: &mut BTreeSet<Vec<NodeId>>) {
        let last = *path.last().unwrap();
        if targets.contains(&last) {
            out.insert(path.clone());
        }
        let next: BTreeSet<NodeId> = g.successors(last, Layer::Ddg).collect();
        for m in next {
            if !path.contains(&m) {
                path.push(m);
                dfs(g, path, targets, out);
                path.pop();
            }
        }
    }
    let t: BTreeSet<NodeId> = targets.iter().copied().collect();
    let mut out = BTreeSet::new();
    for &s in sources {
        dfs(g, &mut vec![s], &t, &mut out);
    }
    out
}

/// All ENTRY→EXIT paths of an acyclic method CFG.
pub fn cfg_paths(g: &CodePropertyGraph, entry: NodeId, exit: NodeId) -> Vec<Vec<NodeId>> {
    fn go(g: &CodePropertyGraph, exit: NodeId, path: &mut Vec<NodeId>, out: &mut Vec<Vec<NodeId>>) {
        let last = *path.last().unwrap();
        if last == exit {
            out.push(path.clone());
            return;
        }
        for s in g.successors(last, Layer::Cfg).collect::<BTreeSet<_>>() {
            assert!(!path.contains(&s), "oracle needs an acyclic CFG");
            path.push(s);
            go(g, exit, path, out);
            path.pop();
        }
    }
    let mut out = Vec::new();
    go(g, exit, &mut vec![entry], &mut out);
    out
}

/// DDG edges by path enumeration: a def reaches a use when some CFG path has
/// no strong redefinition in between; intra-statement flows are added as is.
pub fn brute_ddg(g: &CodePropertyGraph) -> BTreeSet<(NodeId, NodeId, String)> {
    let mut out = BTreeSet::new();
    for m in g.methods() {
        let acc = |n: NodeId| {
            let mut a = if n == m.entry { Default::default() } else { statement_accesses(g, n) };
            if n == m.entry {
                a.defs = entry_defs(g, m.method);
            }
            a
        };
        for path in cfg_paths(g, m.entry, m.exit) {
            let accs: Vec<_> = path.iter().map(|&n| acc(n)).collect();
            for i in 0..accs.len() {
                for d in &accs[i].defs {
                    for later in &accs[i + 1..] {
                        for u in later.uses.iter().filter(|u| u.var == d.var && u.node != d.node) {
                            out.insert((d.node, u.node, u.var.clone()));
                        }
                        if later.defs.iter().any(|k| k.var == d.var && k.strong) {
                            break;
                        }
                    }
                }
            }
        }
        for n in g.cfg_nodes(m.method) {
            for (s, d, v) in acc(n).flows {
                if s != d && !v.is_empty() {
                    out.insert((s, d, v));
                }
            }
        }
    }
    out
}

pub fn ddg_set(g: &CodePropertyGraph) -> BTreeSet<(NodeId, NodeId, String)> {
    g.edges_in_layer(Layer::Ddg).map(|e| (e.src, e.dst, e.var.clone().unwrap_or_default())).collect()
}

/// `(callee, argument count)` pairs of every call in `src`, sorted.
pub fn call_signatures(src: &str) -> Vec<(String, usize)> {
    let u = SourceUnit::new("c", src);
    let ast = parse(&u).unwrap();
    let mut out = Vec::new();
    ast.walk(&mut |n| {
        if n.kind == cpgvuln::frontend::AstKind::Call {
            out.push((n.name().to_string(), n.children.len().saturating_sub(1)));
        }
    });
    out.sort();
    out
}
