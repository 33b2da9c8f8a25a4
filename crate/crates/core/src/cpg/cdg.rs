//! Control dependence from the post-dominator tree.
//!
//! The CFG is augmented with an ENTRY→EXIT edge, and every node that cannot
//! reach EXIT (infinite loops) gets a virtual edge to EXIT.

use super::{CodePropertyGraph, CpgEdge, Layer, NodeId};
use std::collections::{BTreeMap, BTreeSet, HashMap};

/// Augmented CFG of one method: sorted nodes and successor lists.
#[derive(Debug, Clone)]
pub struct AugmentedCfg {
    pub nodes: Vec<NodeId>,
    pub succ: BTreeMap<NodeId, Vec<NodeId>>,
    pub entry: NodeId,
    pub exit: NodeId,
}

pub fn augmented_cfg(g: &CodePropertyGraph, method: NodeId) -> AugmentedCfg {
    let info = *g.method_info(method).expect("method has ENTRY/EXIT");
    let nodes = g.cfg_nodes(method);
    let mut succ: BTreeMap<NodeId, Vec<NodeId>> =
        nodes.iter().map(|&n| (n, g.successors(n, Layer::Cfg).collect())).collect();
    succ.entry(info.entry).or_default().push(info.exit);
    let mut pred: HashMap<NodeId, Vec<NodeId>> = HashMap::new();
    for (&a, bs) in &succ {
        for &b in bs {
            pred.entry(b).or_default().push(a);
        }
    }
    let mut reaches = BTreeSet::from([info.exit]);
    let mut stack = vec![info.exit];
    while let Some(n) = stack.pop() {
        for &p in pred.get(&n).map(Vec::as_slice).unwrap_or(&[]) {
            if reaches.insert(p) {
                stack.push(p);
            }
        }
    }
    // Nodes stuck in a cycle: add a virtual exit edge from the smallest
    // non-reaching node of each region until everything reaches EXIT.
    while let Some(&stuck) = nodes.iter().find(|n| !reaches.contains(n)) {
        succ.entry(stuck).or_default().push(info.exit);
        let mut stack = vec![stuck];
        reaches.insert(stuck);
        while let Some(n) = stack.pop() {
            for &p in pred.get(&n).map(Vec::as_slice).unwrap_or(&[]) {
                if reaches.insert(p) {
                    stack.push(p);
                }
            }
        }
    }
    AugmentedCfg { nodes, succ, entry: info.entry, exit: info.exit }
}

/// Immediate post-dominators (EXIT maps to itself).
pub fn post_dominators(cfg: &AugmentedCfg) -> HashMap<NodeId, NodeId> {
    // Dominators on the reversed graph (Cooper–Harvey–Kennedy).
    let mut rpred: HashMap<NodeId, Vec<NodeId>> = HashMap::new();
    for (&a, bs) in &cfg.succ {
        for &b in bs {
            rpred.entry(b).or_default().push(a);
        }
    }
    let mut post = Vec::new();
    let mut seen = BTreeSet::from([cfg.exit]);
    let mut stack: Vec<(NodeId, usize)> = vec![(cfg.exit, 0)];
    while let Some(&mut (n, ref mut i)) = stack.last_mut() {
        let ps = rpred.get(&n).map(Vec::as_slice).unwrap_or(&[]);
        if *i < ps.len() {
            let p = ps[*i];
            *i += 1;
            if seen.insert(p) {
                stack.push((p, 0));
            }
        } else {
            post.push(n);
            stack.pop();
        }
    }
    let rpo: Vec<NodeId> = post.iter().rev().copied().collect();
    let num: HashMap<NodeId, usize> = rpo.iter().enumerate().map(|(i, &n)| (n, i)).collect();
    let mut idom: HashMap<NodeId, NodeId> = HashMap::from([(cfg.exit, cfg.exit)]);
    let intersect = |idom: &HashMap<NodeId, NodeId>, mut a: NodeId, mut b: NodeId| {
        while a != b {
            while num[&a] > num[&b] {
                a = idom[&a];
            }
            while num[&b] > num[&a] {
                b = idom[&b];
            }
        }
        a
    };
    let mut changed = true;
    while changed {
        changed = false;
        for &n in rpo.iter().skip(1) {
            let mut new = None;
            for &s in cfg.succ.get(&n).map(Vec::as_slice).unwrap_or(&[]) {
                if idom.contains_key(&s) {
                    new = Some(match new {
                        None => s,
                        Some(cur) => intersect(&idom, s, cur),
                    });
                }
            }
            if let Some(d) = new {
                if idom.get(&n) != Some(&d) {
                    idom.insert(n, d);
                    changed = true;
                }
            }
        }
    }
    idom
}

/// Control-dependence pairs (controller, dependent) of one method.
pub fn control_dependences(cfg: &AugmentedCfg) -> BTreeSet<(NodeId, NodeId)> {
    let ipdom = post_dominators(cfg);
    let mut out = BTreeSet::new();
    for (&a, bs) in &cfg.succ {
        let Some(&stop) = ipdom.get(&a) else { continue };
        for &b in bs {
            let mut runner = b;
            while runner != stop {
                out.insert((a, runner));
                match ipdom.get(&runner) {
                    Some(&next) if next != runner => runner = next,
                    _ => break,
                }
            }
        }
    }
    out
}

pub fn cdg_edges(g: &CodePropertyGraph) -> Vec<CpgEdge> {
    let mut edges = Vec::new();
    for &m in g.functions() {
        let cfg = augmented_cfg(g, m);
        for (a, b) in control_dependences(&cfg) {
            edges.push(CpgEdge { src: a, dst: b, layer: Layer::Cdg, var: None, label: None });
        }
    }
    edges
}
