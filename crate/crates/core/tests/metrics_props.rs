mod common;

use common::{corpus, gen_function, graph, GenOpts};
use cpgvuln::frontend::{strip_str, SourceUnit};
use cpgvuln::metrics::{compute_metrics, loc};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Generated statement with its decision-point count and deepest statement level.
struct Gen {
    text: String,
    decisions: u32,
    depth: u32,
}

fn cond(rng: &mut ChaCha8Rng) -> (String, u32) {
    let atoms = ["a > 0", "b < 3", "c", "p != q", "!d"];
    let ops = rng.random_range(0..3);
    let mut s = atoms[rng.random_range(0..atoms.len())].to_string();
    for _ in 0..ops {
        let op = if rng.random_bool(0.5) { "&&" } else { "||" };
        s = format!("{s} {op} {}", atoms[rng.random_range(0..atoms.len())]);
    }
    (s, ops)
}

fn block(rng: &mut ChaCha8Rng, depth: u32, budget: &mut u32) -> Gen {
    let n = rng.random_range(1..=3);
    let mut g = Gen { text: String::new(), decisions: 0, depth };
    for _ in 0..n {
        let s = stmt(rng, depth, budget);
        g.text += &s.text;
        g.decisions += s.decisions;
        g.depth = g.depth.max(s.depth);
    }
    g
}

fn stmt(rng: &mut ChaCha8Rng, depth: u32, budget: &mut u32) -> Gen {
    let simple = Gen { text: "a = a + 1;\n".into(), decisions: 0, depth };
    if *budget == 0 || depth > 4 {
        return simple;
    }
    *budget -= 1;
    let (c, ops) = cond(rng);
    match rng.random_range(0..8) {
        0 => simple,
        1 => {
            let body = block(rng, depth + 1, budget);
            Gen {
                text: format!("if ({c}) {{\n{}}}\n", body.text),
                decisions: 1 + ops + body.decisions,
                depth: body.depth,
            }
        }
        2 => {
            let (t, e) = (block(rng, depth + 1, budget), block(rng, depth + 1, budget));
            Gen {
                text: format!("if ({c}) {{\n{}}} else {{\n{}}}\n", t.text, e.text),
                decisions: 1 + ops + t.decisions + e.decisions,
                depth: t.depth.max(e.depth),
            }
        }
        3 => {
            let body = block(rng, depth + 1, budget);
            Gen {
                text: format!("while ({c}) {{\n{}}}\n", body.text),
                decisions: 1 + ops + body.decisions,
                depth: body.depth,
            }
        }
        4 => {
            let body = block(rng, depth + 1, budget);
            Gen {
                text: format!("do {{\n{}}} while ({c});\n", body.text),
                decisions: 1 + ops + body.decisions,
                depth: body.depth,
            }
        }
        5 => {
            let body = block(rng, depth + 1, budget);
            Gen {
                text: format!("for (i = 0; {c}; i++) {{\n{}}}\n", body.text),
                decisions: 1 + ops + body.decisions,
                depth: body.depth,
            }
        }
        6 => {
            let body = block(rng, depth + 1, budget);
            Gen {
                text: format!("for (;;) {{\n{}if (d) break;\n}}\n", body.text),
                decisions: 1 + body.decisions,
                depth: body.depth.max(depth + 2),
            }
        }
        _ => {
            let arms = rng.random_range(1..=3);
            let default = rng.random_bool(0.5);
            let mut text = "switch (a) {\n".to_string();
            let mut decisions = 0;
            let mut deepest = depth + 1;
            for k in 0..arms {
                let body = block(rng, depth + 1, budget);
                text += &format!("case {k}:\n{}break;\n", body.text);
                decisions += 1 + body.decisions;
                deepest = deepest.max(body.depth);
            }
            if default {
                text += "default:\nb = 0;\n";
            }
            text += "}\n";
            Gen { text, decisions, depth: deepest }
        }
    }
}

fn gen_structured(seed: u64) -> (String, Gen) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut budget = 8;
    let body = block(&mut rng, 1, &mut budget);
    let src = format!("int f(int p, int q)\n{{\nint a = p, b = q, c = 0, d = 1, i;\n{}return a;\n}}\n", body.text);
    (src, body)
}

#[test]
fn corpus_complexities_agree() {
    for u in corpus() {
        let r = compute_metrics(&u, &graph(&u)).unwrap_or_else(|e| panic!("{}: {e}", u.id));
        assert_eq!(r.cc, r.per_function_cc.values().sum::<u32>(), "{}", u.id);
        assert!(r.functions == 0 || r.nesting >= 1);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn complexity_matches_counted_decisions(seed in any::<u64>()) {
        let (src, want) = gen_structured(seed);
        let u = SourceUnit::new("g", src.clone());
        let r = compute_metrics(&u, &graph(&u));
        prop_assert!(r.is_ok(), "{:?}\n{}", r, src);
        let r = r.unwrap();
        prop_assert_eq!(r.cc, 1 + want.decisions, "{}", src);
        prop_assert_eq!(r.nesting, want.depth, "{}", src);
    }

    #[test]
    fn wrapping_in_a_branch_adds_one_level(seed in any::<u64>()) {
        let (src, _) = gen_structured(seed);
        let open = src.find("{\n").unwrap() + 2;
        let close = src.rfind('}').unwrap();
        let wrapped = format!("{}if (p) {{\n{}}}\n{}", &src[..open], &src[open..close], &src[close..]);
        let base = compute_metrics(&SourceUnit::new("a", src.clone()), &graph(&SourceUnit::new("a", src.clone()))).unwrap();
        let w = SourceUnit::new("b", wrapped);
        let deeper = compute_metrics(&w, &graph(&w)).unwrap();
        prop_assert_eq!(deeper.nesting, base.nesting + 1);
        prop_assert_eq!(deeper.cc, base.cc + 1);
    }

    #[test]
    fn loc_ignores_comments(seed in any::<u64>()) {
        let src = gen_function(seed, GenOpts { comments: true, ..GenOpts::default() });
        let stripped = strip_str(&src).0;
        prop_assert_eq!(loc(&stripped), loc(&src));
        // The only comment-only line is the header.
        prop_assert_eq!(loc(&src) as usize, src.lines().count() - 1);
    }

    #[test]
    fn simple_functions_agree_too(seed in any::<u64>()) {
        let u = SourceUnit::new("g", gen_function(seed, GenOpts::default()));
        prop_assert!(compute_metrics(&u, &graph(&u)).is_ok());
    }
}
