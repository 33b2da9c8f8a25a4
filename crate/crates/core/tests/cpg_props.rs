mod common;

use common::{brute_ddg, corpus, ddg_set, gen_function, graph, graph_of, GenOpts};
use cpgvuln::cpg::dataflow::{def_use_pairs, reaching_definitions};
use cpgvuln::cpg::{Layer, NodeKind};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn every_statement_has_a_successor_and_exit_has_none() {
    for u in corpus() {
        let g = graph(&u);
        for m in g.methods() {
            for n in g.cfg_nodes(m.method) {
                let out = g.successors(n, Layer::Cfg).count();
                if n == m.exit {
                    assert_eq!(out, 0, "{}", u.id);
                } else {
                    assert!(out >= 1, "{}: `{}` has no CFG successor", u.id, g.node(n).code);
                }
            }
        }
    }
}

#[test]
fn fixtures_have_exit_nodes() {
    for u in corpus() {
        let g = graph(&u);
        let exits = g.nodes().iter().filter(|n| n.kind == NodeKind::MethodReturn).count();
        assert_eq!(exits, g.functions().len(), "{}", u.id);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn reaching_definitions_ignore_worklist_order(seed in any::<u64>(), shuffle in any::<u64>()) {
        let (_, g) = graph_of(&gen_function(seed, GenOpts::default()));
        for &m in g.functions() {
            let base = def_use_pairs(&reaching_definitions(&g, m, None));
            let mut order = g.cfg_nodes(m);
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(shuffle));
            prop_assert_eq!(&def_use_pairs(&reaching_definitions(&g, m, Some(&order))), &base);
            order.reverse();
            prop_assert_eq!(&def_use_pairs(&reaching_definitions(&g, m, Some(&order))), &base);
        }
    }

    #[test]
    fn ddg_matches_path_enumeration(seed in any::<u64>()) {
        let opts = GenOpts { max_stmts: 12, loops: false, single_branch: true, comments: false };
        let (_, g) = graph_of(&gen_function(seed, opts));
        prop_assert_eq!(ddg_set(&g), brute_ddg(&g));
    }

    #[test]
    fn ddg_matches_path_enumeration_with_many_branches(seed in any::<u64>()) {
        let opts = GenOpts { max_stmts: 8, loops: false, single_branch: false, comments: false };
        let (_, g) = graph_of(&gen_function(seed, opts));
        prop_assert_eq!(ddg_set(&g), brute_ddg(&g));
    }
}
