use cpgvuln::detector::{
    calibrate, classify, evaluate, grid_len, grid_point, threshold, Confusion, EvalReport, LogitPair, DEFAULT_GRID_STEP,
};
use proptest::prelude::*;

fn logit() -> impl Strategy<Value = f64> {
    -50.0f64..50.0
}

/// Sigmoid of the logit difference, written independently of the softmax.
fn sigmoid_oracle(lv: f64, lb: f64) -> f64 {
    let d = lv - lb;
    if d >= 0.0 {
        1.0 / (1.0 + (-d).exp())
    } else {
        d.exp() / (1.0 + d.exp())
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn probabilities_sum_to_one(lv in -1e4f64..1e4, lb in -1e4f64..1e4) {
        let (pv, pb) = LogitPair::new(lv, lb).unwrap().probabilities();
        prop_assert!((pv + pb - 1.0).abs() <= 1e-12);
        prop_assert!((0.0..=1.0).contains(&pv));
        prop_assert!((pv - sigmoid_oracle(lv, lb)).abs() <= 1e-12);
    }

    #[test]
    fn adding_a_constant_changes_nothing(lv in logit(), lb in logit(), c in -1e3f64..1e3, gamma in 0.0f64..=1.0) {
        let a = classify(LogitPair { lv, lb }, gamma).unwrap();
        let b = classify(LogitPair { lv: lv + c, lb: lb + c }, gamma).unwrap();
        prop_assert!((a.p_vuln - b.p_vuln).abs() <= 1e-9);
        if (a.p_vuln - gamma).abs() > 1e-9 {
            prop_assert_eq!(a.label, b.label);
        }
    }

    #[test]
    fn raising_the_threshold_never_adds_positives(lv in logit(), lb in logit(), g1 in 0.0f64..=1.0, g2 in 0.0f64..=1.0) {
        let (lo, hi) = if g1 <= g2 { (g1, g2) } else { (g2, g1) };
        let lp = LogitPair { lv, lb };
        prop_assert!(classify(lp, hi).unwrap().label <= classify(lp, lo).unwrap().label);
    }

    #[test]
    fn calibration_matches_exhaustive_search(
        samples in proptest::collection::vec((logit(), logit(), any::<bool>()), 1..40),
        coarse in any::<bool>(),
    ) {
        let step = if coarse { 0.01 } else { DEFAULT_GRID_STEP };
        let s: Vec<_> = samples.iter().map(|&(lv, lb, t)| (LogitPair { lv, lb }, t)).collect();
        let c = calibrate(&s, step).unwrap();
        // Oracle: classify every sample at every grid point.
        let mut best: Option<(usize, f64)> = None;
        for k in 0..grid_len(step) {
            let g = grid_point(k, step);
            let correct = s.iter().filter(|(lp, t)| (classify(*lp, g).unwrap().label == 1) == *t).count();
            if best.is_none_or(|(b, _)| correct > b) {
                best = Some((correct, g));
            }
        }
        let (correct, gamma) = best.unwrap();
        prop_assert_eq!(c.gamma, gamma);
        prop_assert_eq!(c.accuracy, correct as f64 / s.len() as f64);
    }

    #[test]
    fn report_matches_definitions(tp in 0u64..50, fp in 0u64..50, tn in 0u64..50, fn_ in 0u64..50) {
        prop_assume!(tp + fp + tn + fn_ > 0);
        let r = EvalReport::<f64>::from_counts(Confusion { tp, fp, tn, fn_ }).unwrap();
        let (tp, fp, tn, fn_) = (tp as f64, fp as f64, tn as f64, fn_ as f64);
        prop_assert_eq!(r.accuracy, (tp + tn) / (tp + fp + tn + fn_));
        if tp + fp > 0.0 { prop_assert_eq!(r.precision, tp / (tp + fp)); }
        if tp + fn_ > 0.0 { prop_assert_eq!(r.recall, tp / (tp + fn_)); }
        // Harmonic mean via counts: 2TP / (2TP + FP + FN).
        if tp > 0.0 { prop_assert!((r.f1 - 2.0 * tp / (2.0 * tp + fp + fn_)).abs() < 1e-12); }
    }
}

#[test]
fn evaluate_counts_each_quadrant() {
    let v = |p: f64, t: bool| (threshold(p, 0.5), t);
    let r = evaluate(&[v(0.9, true), v(0.1, true), v(0.9, false), v(0.1, false), v(0.5, false)]).unwrap();
    assert_eq!(r.counts, Confusion { tp: 1, fn_: 1, fp: 1, tn: 2 });
}

#[test]
fn primevul_operating_point_row() {
    // 40 vulnerable + 40 safe at γ = 0.594: 18 caught, no false alarms.
    let r = EvalReport::<f64>::from_counts(Confusion { tp: 18, fn_: 22, tn: 40, fp: 0 }).unwrap();
    assert_eq!(r.accuracy, 0.725);
    assert_eq!(r.precision, 1.0);
    assert_eq!(r.recall, 0.45);
    assert!((r.f1 - 0.6206).abs() < 1e-4);
}
