//! Two-logit classification head, threshold search and evaluation metrics.
//!
//! The arithmetic is generic over [`num_traits::Float`]; the `*64` aliases are
//! what the rest of the crate uses.

mod scorer;
mod thresholds;

pub(crate) use scorer::fill_prompt;
pub use scorer::{
    score_batch, HeuristicRule, LocalHeuristic, RemoteScorer, ScoreError, Scorer, ScorerKind, CLASSIFY_PROMPT,
};
pub use thresholds::{Thresholds, ThresholdsError};

use num_traits::Float;
use serde::{Deserialize, Serialize};
use std::fmt::{self, Write as _};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum DetectorError {
    #[error("threshold must lie in [0, 1]")]
    ThresholdOutOfRange,
    #[error("logits must be finite")]
    NonFiniteLogit,
    #[error("grid step must satisfy 0 < step <= 0.01")]
    BadGridStep,
    #[error("no samples")]
    Empty,
}

/// Logits of the vulnerable (`lv`) and safe (`lb`) class tokens.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogitPair<T = f64> {
    pub lv: T,
    pub lb: T,
}

impl<T: Float> LogitPair<T> {
    pub fn new(lv: T, lb: T) -> Result<Self, DetectorError> {
        if lv.is_finite() && lb.is_finite() {
            Ok(LogitPair { lv, lb })
        } else {
            Err(DetectorError::NonFiniteLogit)
        }
    }

    /// `(p_vuln, p_safe)` by a max-shifted softmax.
    pub fn probabilities(&self) -> (T, T) {
        let m = self.lv.max(self.lb);
        let (ev, eb) = ((self.lv - m).exp(), (self.lb - m).exp());
        let z = ev + eb;
        (ev / z, eb / z)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Verdict<T = f64> {
    pub p_vuln: T,
    pub threshold: T,
    pub label: u8,
}

pub type LogitPair64 = LogitPair<f64>;
pub type LogitPair32 = LogitPair<f32>;
pub type Verdict64 = Verdict<f64>;
pub type Verdict32 = Verdict<f32>;
pub type EvalReport64 = EvalReport<f64>;
pub type Calibration64 = Calibration<f64>;

fn check_gamma<T: Float>(gamma: T) -> Result<(), DetectorError> {
    if gamma >= T::zero() && gamma <= T::one() {
        Ok(())
    } else {
        Err(DetectorError::ThresholdOutOfRange)
    }
}

/// Label 1 iff `p_vuln > gamma`.
pub fn classify<T: Float>(lp: LogitPair<T>, gamma: T) -> Result<Verdict<T>, DetectorError> {
    check_gamma(gamma)?;
    Ok(threshold(lp.probabilities().0, gamma))
}

/// Applies the decision rule to an already computed probability.
pub fn threshold<T: Float>(p_vuln: T, gamma: T) -> Verdict<T> {
    Verdict { p_vuln, threshold: gamma, label: u8::from(p_vuln > gamma) }
}

/// A sample is as vulnerable as its most vulnerable slice.
pub fn aggregate_max<T: Float>(p: impl IntoIterator<Item = T>) -> Option<T> {
    p.into_iter().reduce(T::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration<T = f64> {
    pub gamma: T,
    pub accuracy: T,
    pub grid_points: usize,
}

/// Grid point `k` of a search with the given step, clamped to 1. Steps that
/// divide 1 evenly use `k / n`, which keeps points like 0.478 exact.
pub fn grid_point<T: Float>(k: usize, step: T) -> T {
    let k = T::from(k).expect("grid index fits");
    let inv = step.recip();
    let n = inv.round();
    let x = if (inv - n).abs() < T::from(1e-9).expect("constant") { k / n } else { k * step };
    x.min(T::one())
}

/// Number of grid points in `[0, 1]` for `step`.
pub fn grid_len<T: Float>(step: T) -> usize {
    (T::one() / step).ceil().to_usize().expect("grid size fits") + 1
}

pub const DEFAULT_GRID_STEP: f64 = 0.001;

/// Exhaustive grid search for the accuracy-maximizing γ; ties resolve to the
/// smallest γ.
pub fn calibrate<T: Float>(samples: &[(LogitPair<T>, bool)], step: T) -> Result<Calibration<T>, DetectorError> {
    if samples.is_empty() {
        return Err(DetectorError::Empty);
    }
    if !(step > T::zero() && step <= T::from(0.01).expect("constant")) {
        return Err(DetectorError::BadGridStep);
    }
    let mut pos: Vec<T> = Vec::new();
    let mut neg: Vec<T> = Vec::new();
    for (lp, truth) in samples {
        let p = lp.probabilities().0;
        if *truth {
            pos.push(p)
        } else {
            neg.push(p)
        }
    }
    let by = |a: &T, b: &T| a.partial_cmp(b).expect("finite probability");
    pos.sort_by(by);
    neg.sort_by(by);
    let n = grid_len(step);
    let mut best = (0usize, T::zero());
    for k in 0..n {
        let g = grid_point(k, step);
        // Positives above g are correct, negatives at or below g are correct.
        let correct = (pos.len() - pos.partition_point(|&p| p <= g)) + neg.partition_point(|&p| p <= g);
        if k == 0 || correct > best.0 {
            best = (correct, g);
        }
    }
    let total = T::from(samples.len()).expect("count fits");
    Ok(Calibration { gamma: best.1, accuracy: T::from(best.0).expect("count fits") / total, grid_points: n })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl Confusion {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn record(&mut self, predicted: u8, truth: bool) {
        match (predicted == 1, truth) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, false) => self.tn += 1,
            (false, true) => self.fn_ += 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport<T = f64> {
    pub accuracy: T,
    pub precision: T,
    pub recall: T,
    pub f1: T,
    pub counts: Confusion,
    /// TP + FP = 0; precision reported as 0.
    pub precision_undefined: bool,
    /// TP + FN = 0; recall reported as 0.
    pub recall_undefined: bool,
}

impl<T: Float> EvalReport<T> {
    pub fn from_counts(c: Confusion) -> Result<Self, DetectorError> {
        if c.total() == 0 {
            return Err(DetectorError::Empty);
        }
        let f = |x: u64| T::from(x).expect("count fits");
        let ratio = |num: u64, den: u64| if den == 0 { T::zero() } else { f(num) / f(den) };
        let precision = ratio(c.tp, c.tp + c.fp);
        let recall = ratio(c.tp, c.tp + c.fn_);
        let two = T::one() + T::one();
        let f1 =
            if precision + recall > T::zero() { two * precision * recall / (precision + recall) } else { T::zero() };
        Ok(EvalReport {
            accuracy: ratio(c.tp + c.tn, c.total()),
            precision,
            recall,
            f1,
            counts: c,
            precision_undefined: c.tp + c.fp == 0,
            recall_undefined: c.tp + c.fn_ == 0,
        })
    }
}

pub fn evaluate<T: Float>(verdicts: &[(Verdict<T>, bool)]) -> Result<EvalReport<T>, DetectorError> {
    let mut c = Confusion::default();
    for (v, truth) in verdicts {
        c.record(v.label, *truth);
    }
    EvalReport::from_counts(c)
}

/// Plain-text table with one row per named report.
pub fn render_table<T: Float + fmt::Display>(rows: &[(&str, &EvalReport<T>)]) -> String {
    let w = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(0).max("Dataset".len());
    let mut s = format!("{:<w$}  Accuracy  Precision  Recall  F1-score\n", "Dataset");
    for (name, r) in rows {
        let _ = writeln!(s, "{name:<w$}  {:>8.4}  {:>9.4}  {:>6.4}  {:>8.4}", r.accuracy, r.precision, r.recall, r.f1);
    }
    s
}
