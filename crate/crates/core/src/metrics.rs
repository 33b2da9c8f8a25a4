//! Unit and slice complexity metrics.
//!
//! Decision points `p(d)`: `if`, `while`, `do`, `for` with a condition, each
//! non-default `case`, and each `&&`/`||` in the short-circuit chain of a loop or
//! `if` condition. Graph complexity is `E − N + 2P` over the unit's CFGs with
//! `P` = number of functions; the two must agree.

use crate::cpg::{CodePropertyGraph, Layer};
use crate::frontend::{parse, strip_str, AstKind, AstNode, FrontendError, SourceUnit};
use num_traits::{Float, FromPrimitive};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashSet};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("complexity mismatch in `{function}`: graph formula {graph}, decision points {decisions}")]
    MetricMismatch { function: String, graph: i64, decisions: i64 },
    #[error("unknown metric `{0}`")]
    UnknownMetric(String),
    #[error("bin boundaries must be strictly increasing and non-empty")]
    BadBins,
    #[error(transparent)]
    Frontend(#[from] FrontendError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub loc: u32,
    pub cc: u32,
    pub functions: u32,
    pub branches: u32,
    pub nesting: u32,
    pub per_function_cc: BTreeMap<String, u32>,
}

pub const METRIC_NAMES: [&str; 5] = ["loc", "cc", "functions", "branches", "nesting"];

impl MetricsReport {
    pub fn get(&self, metric: &str) -> Result<u32, MetricsError> {
        Ok(match metric {
            "loc" => self.loc,
            "cc" => self.cc,
            "functions" => self.functions,
            "branches" => self.branches,
            "nesting" => self.nesting,
            other => return Err(MetricsError::UnknownMetric(other.to_string())),
        })
    }
}

/// Non-blank lines once comments are removed.
pub fn loc(text: &str) -> u32 {
    strip_str(text).0.lines().filter(|l| !l.trim().is_empty()).count() as u32
}

fn chain_ops(e: &AstNode) -> u32 {
    if e.kind == AstKind::BinaryOp && matches!(e.name(), "&&" | "||") {
        1 + chain_ops(&e.children[0]) + chain_ops(&e.children[1])
    } else {
        0
    }
}

/// `1 + Σ p(d)` for one function definition.
pub fn decision_cc(func: &AstNode) -> u32 {
    let mut p = 0;
    func.walk(&mut |n| {
        p += match n.kind {
            AstKind::If | AstKind::While => 1 + chain_ops(&n.children[0]),
            AstKind::DoWhile => 1 + chain_ops(&n.children[1]),
            AstKind::For if n.children[1].kind != AstKind::Empty => 1 + chain_ops(&n.children[1]),
            AstKind::Case if !n.children.is_empty() => 1,
            _ => 0,
        }
    });
    1 + p
}

/// Branch count: 2 per `if` and conditional loop, one per switch arm (plus the
/// implicit fall-out when there is no `default`).
pub fn branch_count(root: &AstNode) -> u32 {
    let mut b = 0;
    root.walk(&mut |n| match n.kind {
        AstKind::If | AstKind::While | AstKind::DoWhile => b += 2,
        AstKind::For if n.children[1].kind != AstKind::Empty => b += 2,
        AstKind::Switch => {
            let (mut cases, mut default) = (0, false);
            collect_cases(&n.children[1], &mut cases, &mut default);
            b += cases + u32::from(!default);
        }
        _ => {}
    });
    b
}

fn collect_cases(n: &AstNode, cases: &mut u32, default: &mut bool) {
    for c in &n.children {
        match c.kind {
            AstKind::Switch => {}
            AstKind::Case => {
                *cases += 1;
                *default |= c.children.is_empty();
            }
            _ => collect_cases(c, cases, default),
        }
    }
}

/// Maximum statement depth; statements directly in a function body are at 1.
pub fn nesting_depth(func: &AstNode) -> u32 {
    fn go(n: &AstNode, depth: u32) -> u32 {
        let mut best = 0;
        for c in &n.children {
            if !c.kind.is_statement() || c.kind == AstKind::Comment {
                continue;
            }
            if c.kind == AstKind::Block {
                best = best.max(go(c, depth));
                continue;
            }
            best = best.max(depth);
            if matches!(c.kind, AstKind::If | AstKind::While | AstKind::DoWhile | AstKind::For | AstKind::Switch) {
                best = best.max(go(c, depth + 1));
            }
        }
        best
    }
    func.body().map(|b| go(b, 1)).unwrap_or(0)
}

/// `E − N + 2` over one method's CFG.
pub fn graph_cc(g: &CodePropertyGraph, method: u32) -> i64 {
    let nodes = g.cfg_nodes(method);
    let set: HashSet<u32> = nodes.iter().copied().collect();
    let e = nodes.iter().map(|&n| g.out_edges(n, Layer::Cfg).filter(|e| set.contains(&e.dst)).count()).sum::<usize>()
        as i64;
    e - nodes.len() as i64 + 2
}

pub fn compute_metrics(unit: &SourceUnit, g: &CodePropertyGraph) -> Result<MetricsReport, MetricsError> {
    let ast = parse(unit)?;
    let funcs: Vec<&AstNode> = ast.functions().collect();
    let mut per_function_cc = BTreeMap::new();
    let (mut edges_minus_nodes, mut total) = (0i64, 0u32);
    for (f, &m) in funcs.iter().zip(g.functions()) {
        let d = decision_cc(f);
        let gc = graph_cc(g, m);
        if gc != d as i64 {
            return Err(MetricsError::MetricMismatch {
                function: f.name().to_string(),
                graph: gc,
                decisions: d as i64,
            });
        }
        edges_minus_nodes += gc - 2;
        total += d;
        let mut key = f.name().to_string();
        let mut k = 2;
        while per_function_cc.contains_key(&key) {
            key = format!("{}#{k}", f.name());
            k += 1;
        }
        per_function_cc.insert(key, d);
    }
    let p = funcs.len() as i64;
    let cc = edges_minus_nodes + 2 * p;
    debug_assert_eq!(cc, total as i64);
    Ok(MetricsReport {
        loc: loc(&unit.text),
        cc: cc as u32,
        functions: funcs.len() as u32,
        branches: branch_count(&ast),
        nesting: funcs.iter().map(|f| nesting_depth(f)).max().unwrap_or(0),
        per_function_cc,
    })
}

/// Counts over `[edges[i], edges[i+1])`; the last bin is closed. Values outside
/// the edges are tallied separately.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Histogram {
    pub metric: String,
    pub edges: Vec<u32>,
    pub counts: Vec<u32>,
    pub below: u32,
    pub above: u32,
}

pub fn bin_by_metric(reports: &[MetricsReport], metric: &str, edges: &[u32]) -> Result<Histogram, MetricsError> {
    if !METRIC_NAMES.contains(&metric) {
        return Err(MetricsError::UnknownMetric(metric.to_string()));
    }
    if edges.len() < 2 || edges.windows(2).any(|w| w[0] >= w[1]) {
        return Err(MetricsError::BadBins);
    }
    let mut h = Histogram {
        metric: metric.to_string(),
        edges: edges.to_vec(),
        counts: vec![0; edges.len() - 1],
        below: 0,
        above: 0,
    };
    let last = *edges.last().expect("non-empty");
    for r in reports {
        let v = r.get(metric)?;
        if v < edges[0] {
            h.below += 1;
        } else if v > last {
            h.above += 1;
        } else {
            let i = edges.partition_point(|&e| e <= v).saturating_sub(1).min(h.counts.len() - 1);
            h.counts[i] += 1;
        }
    }
    Ok(h)
}

/// One `Metric, Mean, Min, Max` row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow<T> {
    pub metric: String,
    pub mean: T,
    pub min: u32,
    pub max: u32,
}

pub fn summarize_as<T: Float + FromPrimitive>(reports: &[MetricsReport]) -> Vec<SummaryRow<T>> {
    METRIC_NAMES
        .iter()
        .map(|&m| {
            let vals: Vec<u32> = reports.iter().map(|r| r.get(m).expect("known metric")).collect();
            let n = T::from_usize(vals.len()).expect("count fits");
            let sum = vals.iter().fold(T::zero(), |a, &v| a + T::from_u32(v).expect("u32 fits"));
            SummaryRow {
                metric: m.to_string(),
                mean: if vals.is_empty() { T::zero() } else { sum / n },
                min: vals.iter().copied().min().unwrap_or(0),
                max: vals.iter().copied().max().unwrap_or(0),
            }
        })
        .collect()
}

pub fn summarize(reports: &[MetricsReport]) -> Vec<SummaryRow<f64>> {
    summarize_as(reports)
}
