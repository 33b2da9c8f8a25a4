use super::*;
use crate::frontend::{parse, SourceUnit};

fn cpg(src: &str) -> CodePropertyGraph {
    let u = SourceUnit::new("t", src);
    build_cpg(&parse(&u).unwrap(), &u).unwrap()
}

fn find(g: &CodePropertyGraph, kind: NodeKind, code: &str) -> NodeId {
    g.nodes().iter().find(|n| n.kind == kind && n.code == code).unwrap_or_else(|| panic!("no {kind} `{code}`")).id
}

fn has_edge(g: &CodePropertyGraph, layer: Layer, a: NodeId, b: NodeId) -> bool {
    g.out_edges(a, layer).any(|e| e.dst == b)
}

#[test]
fn single_def_use_pair() {
    let g = cpg("int f(){int a=1; int b=a;}");
    let ids: Vec<_> = g.nodes().iter().filter(|n| n.kind == NodeKind::Identifier && n.name() == "a").collect();
    assert_eq!(ids.len(), 2);
    let e = g.out_edges(ids[0].id, Layer::Ddg).find(|e| e.dst == ids[1].id).expect("def a -> use a");
    assert_eq!(e.var.as_deref(), Some("a"));
}

#[test]
fn ids_follow_preorder_and_methods_have_entry_exit() {
    let g = cpg("int g;\nint f(int x){ return x; }\nvoid h(){}");
    assert_eq!(g.functions().len(), 2);
    for m in g.methods() {
        assert!(m.method < m.entry && m.entry < m.ret && m.ret < m.exit);
    }
    for (i, n) in g.nodes().iter().enumerate() {
        assert_eq!(n.id as usize, i);
    }
}

#[test]
fn cfg_well_formed() {
    let g = cpg("int f(int n){ int s=0; for(int i=0;i<n;i++){ if(i%2) continue; s+=i; } while(n>0 && s){ n--; if(n==3) break; } switch(n){case 1: s=1; case 2: break; default: s=0;} do { s--; } while(s>0); goto out; out: return s; }");
    for m in g.methods() {
        for n in g.cfg_nodes(m.method) {
            let out = g.out_edges(n, Layer::Cfg).count();
            if n == m.exit {
                assert_eq!(out, 0);
            } else {
                assert!(out >= 1, "node {} `{}` has no successor", n, g.node(n).code);
            }
        }
    }
}

#[test]
fn branch_labels() {
    let g = cpg("int f(int x){ if(x){ x=1; } return x; }");
    let cs = find(&g, NodeKind::ControlStructure, "if(x)");
    let labels: Vec<_> = g.out_edges(cs, Layer::Cfg).map(|e| e.label.unwrap()).collect();
    assert_eq!(labels, [CfgLabel::True, CfgLabel::False]);
}

#[test]
fn short_circuit_leaves_are_cfg_nodes() {
    let g = cpg("int f(int a, int b){ if(a && b) return 1; return 0; }");
    let b_leaf = g
        .nodes()
        .iter()
        .find(|n| n.kind == NodeKind::Identifier && n.name() == "b" && g.is_cfg_node(n.id))
        .expect("leaf b is a CFG node");
    assert_eq!(g.out_edges(b_leaf.id, Layer::Cfg).count(), 2);
}

#[test]
fn control_dependence_on_true_branch_only() {
    let g = cpg("int f(int x){ int a=0; if(x){a=1;} return 0;}");
    let cs = find(&g, NodeKind::ControlStructure, "if(x)");
    let a1 = find(&g, NodeKind::Assignment, "a=1");
    let r0 = find(&g, NodeKind::ControlStructure, "return 0");
    assert!(has_edge(&g, Layer::Cdg, cs, a1));
    assert!(!has_edge(&g, Layer::Cdg, cs, r0));
}

#[test]
fn early_return_makes_fallthrough_dependent() {
    // Return(0) runs only when the branch is not taken.
    let g = cpg("int f(int x){ if(x){return 1;} return 0;}");
    let cs = find(&g, NodeKind::ControlStructure, "if(x)");
    let r1 = find(&g, NodeKind::ControlStructure, "return 1");
    let r0 = find(&g, NodeKind::ControlStructure, "return 0");
    assert!(has_edge(&g, Layer::Cdg, cs, r1));
    assert!(has_edge(&g, Layer::Cdg, cs, r0));
}

#[test]
fn unresolved_goto() {
    let u = SourceUnit::new("t", "void f(){ goto nowhere; }");
    let e = build_cpg(&parse(&u).unwrap(), &u).unwrap_err();
    assert_eq!(e, CpgError::UnresolvedGoto { label: "nowhere".into(), line: 1 });
}

#[test]
fn address_taken_argument_gets_weak_def() {
    let g = cpg("int f(){ int v = 0; read_into(&v); return v; }");
    let ret_v = g.nodes().iter().rfind(|n| n.kind == NodeKind::Identifier && n.name() == "v").unwrap().id;
    let srcs: Vec<_> = g.predecessors(ret_v, Layer::Ddg).map(|p| g.node(p).line_number).collect();
    // both the initializer and the call reach the return
    assert_eq!(srcs.len(), 2);
}

#[test]
fn member_and_deref_are_distinct_variables() {
    let g = cpg("void f(struct s *p){ p->n = 1; *p = x; g(p->n); }");
    let vars: std::collections::BTreeSet<_> = g.ddg_edges().map(|e| e.var.clone().unwrap()).collect();
    assert!(vars.contains("p->n"));
    assert!(vars.contains("p"));
}

#[test]
fn serialization_round_trip() {
    let g = cpg(
        "static void f(int *slot){ u16 len; len = get(slot); if (len > 3) { goto drop; } put(len + 1); drop: return; }",
    );
    let mut buf = Vec::new();
    save_cpg(&g, &mut buf).unwrap();
    let h = load_cpg(buf.as_slice()).unwrap();
    assert_eq!(g, h);
    let vars = |g: &CodePropertyGraph| {
        let mut v: Vec<_> = g.ddg_edges().map(|e| (e.src, e.dst, e.var.clone())).collect();
        v.sort();
        v
    };
    assert_eq!(vars(&g), vars(&h));
}

#[test]
fn empty_function_round_trip() {
    let g = cpg("void f(){}");
    let mut buf = Vec::new();
    save_cpg(&g, &mut buf).unwrap();
    assert_eq!(load_cpg(buf.as_slice()).unwrap(), g);
}

#[test]
fn truncated_and_versioned_streams_rejected() {
    let g = cpg("void f(){}");
    let mut buf = Vec::new();
    save_cpg(&g, &mut buf).unwrap();
    let cut = &buf[..buf.len() / 2];
    assert!(matches!(load_cpg(cut), Err(CpgError::Format(_))));
    let text = String::from_utf8(buf).unwrap().replace("\"schema_version\": 1", "\"schema_version\": 99");
    match load_cpg(text.as_bytes()) {
        Err(CpgError::Format(m)) => assert!(m.contains("99")),
        other => panic!("{other:?}"),
    }
}
