mod common;

use common::{gen_function, graph, graph_of, read_fixture, GenOpts, SKB_PUT_QUERY};
use cpgvuln::cpg::{CodePropertyGraph, NodeId};
use cpgvuln::frontend::{parse, SourceUnit};
use cpgvuln::query::{eval_query, parse_query};
use cpgvuln::slicer::{pdg_closure, slice_flows, Slice};
use proptest::prelude::*;
use std::collections::BTreeSet;

const PARAM_TO_SINK: &str = r#"cpg.call.name("sink").reachableByFlows(cpg.parameter)"#;

fn slice_of(src: &str, q: &str) -> (Slice, CodePropertyGraph) {
    let (u, g) = graph_of(src);
    let v = eval_query(&parse_query(q).unwrap(), &g).unwrap();
    let s = slice_flows(&v.as_flows().unwrap().paths, &g, &u).unwrap();
    (s, g)
}

fn sig(g: &CodePropertyGraph, n: NodeId) -> (String, String, String) {
    let node = g.node(n);
    (format!("{:?}", node.kind), node.name().to_string(), node.code.clone())
}

fn with_comments() -> GenOpts {
    GenOpts { comments: true, ..GenOpts::default() }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn slices_reparse_and_contain_their_paths(seed in any::<u64>()) {
        let (s, g) = slice_of(&gen_function(seed, with_comments()), PARAM_TO_SINK);
        prop_assume!(!s.paths.is_empty());
        let re = SourceUnit::new("slice", s.rendered_text.clone());
        prop_assert!(parse(&re).is_ok(), "slice must parse:\n{}", s.rendered_text);
        let rg = graph(&re);
        let have: BTreeSet<_> = rg.nodes().iter().map(|n| sig(&rg, n.id)).collect();
        for p in &s.paths {
            for &n in &p.nodes {
                prop_assert!(have.contains(&sig(&g, n)), "{:?} missing from\n{}", sig(&g, n), s.rendered_text);
            }
        }
        prop_assert!(!s.rendered_text.contains("/*") && !s.rendered_text.contains("//"));
        prop_assert!(s.slice_loc <= s.original_loc);
    }

    #[test]
    fn slicing_a_slice_changes_nothing(seed in any::<u64>()) {
        let (s, _) = slice_of(&gen_function(seed, with_comments()), PARAM_TO_SINK);
        prop_assume!(!s.paths.is_empty());
        let (again, _) = slice_of(&s.rendered_text, PARAM_TO_SINK);
        prop_assert_eq!(again.rendered_text, s.rendered_text);
    }

    #[test]
    fn closure_is_monotone(seed in any::<u64>(), picks in proptest::collection::vec(any::<prop::sample::Index>(), 1..6), extra in proptest::collection::vec(any::<prop::sample::Index>(), 1..4)) {
        let (_, g) = graph_of(&gen_function(seed, GenOpts::default()));
        let n = g.nodes().len();
        let small: BTreeSet<NodeId> = picks.iter().map(|i| g.nodes()[i.index(n)].id).collect();
        let mut big = small.clone();
        big.extend(extra.iter().map(|i| g.nodes()[i.index(n)].id));
        let (cs, _) = pdg_closure(&small, &g);
        let (cb, _) = pdg_closure(&big, &g);
        prop_assert!(small.is_subset(&cs));
        prop_assert!(cs.is_subset(&cb));
        // Closed: closing again adds nothing.
        prop_assert_eq!(pdg_closure(&cs, &g).0, cs);
    }
}

#[test]
fn dma_rx_slice_is_stable_and_self_contained() {
    let src = read_fixture("dma_rx.c");
    let (s, g) = slice_of(&src, SKB_PUT_QUERY);
    assert!(!s.paths.is_empty());
    let (again, _) = slice_of(&s.rendered_text, SKB_PUT_QUERY);
    assert_eq!(again.rendered_text, s.rendered_text);
    let rg = graph(&SourceUnit::new("slice", s.rendered_text.clone()));
    let have: BTreeSet<_> = rg.nodes().iter().map(|n| sig(&rg, n.id)).collect();
    assert!(s.paths.iter().flat_map(|p| &p.nodes).all(|&n| have.contains(&sig(&g, n))));
}
