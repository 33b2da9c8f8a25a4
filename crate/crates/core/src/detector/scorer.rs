use super::LogitPair;
use crate::http::{HttpFailure, JsonClient};
use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use std::time::Duration;
use thiserror::Error;

/// Classification prompt; `<Code>` is replaced by the snippet.
pub const CLASSIFY_PROMPT: &str = include_str!("../../prompts/classify.txt");

/// Logit magnitude used when a service only returns a one-word answer.
const FALLBACK_LOGIT: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScoreError {
    #[error("empty input text")]
    EmptyInput,
    #[error("scoring service unavailable: {message}")]
    ServiceUnavailable { retry_after: Option<Duration>, message: String },
    #[error("unusable scoring response: {0}")]
    BadResponse(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScorerKind {
    RemoteModelService,
    LocalHeuristic,
}

pub trait Scorer: Send + Sync {
    fn kind(&self) -> ScorerKind;
    fn score(&self, text: &str) -> Result<LogitPair<f64>, ScoreError>;
}

/// Scores `texts` with at most `in_flight` concurrent requests; order is kept.
pub fn score_batch(scorer: &dyn Scorer, texts: &[String], in_flight: usize) -> Vec<Result<LogitPair<f64>, ScoreError>> {
    match rayon::ThreadPoolBuilder::new().num_threads(in_flight.max(1)).build() {
        Ok(pool) => pool.install(|| texts.par_iter().map(|t| scorer.score(t)).collect()),
        Err(_) => texts.iter().map(|t| scorer.score(t)).collect(),
    }
}

/// One pattern rule: a match adds `weight` to the vulnerable logit when
/// positive, or `-weight` to the safe logit when negative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeuristicRule {
    pub pattern: String,
    pub weight: f64,
}

/// Deterministic offline scorer: a table of regex rules, each counted at most
/// once per text.
#[derive(Debug, Clone)]
pub struct LocalHeuristic {
    rules: Vec<(Regex, HeuristicRule)>,
}

const DEFAULT_RULES: &[(&str, f64)] = &[
    (r"\bstrcpy\s*\(", 3.0),
    (r"\bstrcat\s*\(", 3.0),
    (r"\bgets\s*\(", 4.0),
    (r"\bsprintf\s*\(", 2.0),
    (r"\bvsprintf\s*\(", 2.0),
    (r"\bscanf\s*\(\s*\x22%s", 3.0),
    (r"\bmemcpy\s*\(", 1.5),
    (r"\bmemmove\s*\(", 1.0),
    (r"\bskb_put\s*\(", 1.0),
    (r"\balloca\s*\(", 1.0),
    (r"\bsystem\s*\(", 2.0),
    (r"\bfree\s*\([^;]*;[\s\S]*\bfree\s*\(", 1.5),
    (r"\bstrncpy\s*\(|\bstrlcpy\s*\(|\bsnprintf\s*\(", -1.5),
    (r"\bsizeof\b", -1.0),
    // A comparison inside an `if` condition (`->` is not one).
    (r"\bif\s*\([^;{)]*(<|[^-]>)", -2.0),
];

impl Default for LocalHeuristic {
    fn default() -> Self {
        Self::new(DEFAULT_RULES.iter().map(|&(p, w)| HeuristicRule { pattern: p.into(), weight: w }).collect())
            .expect("built-in rules compile")
    }
}

impl LocalHeuristic {
    pub fn new(rules: Vec<HeuristicRule>) -> Result<Self, regex::Error> {
        let rules = rules.into_iter().map(|r| Ok((Regex::new(&r.pattern)?, r))).collect::<Result<_, _>>()?;
        Ok(LocalHeuristic { rules })
    }

    pub fn rules(&self) -> impl Iterator<Item = &HeuristicRule> {
        self.rules.iter().map(|(_, r)| r)
    }
}

impl Scorer for LocalHeuristic {
    fn kind(&self) -> ScorerKind {
        ScorerKind::LocalHeuristic
    }

    fn score(&self, text: &str) -> Result<LogitPair<f64>, ScoreError> {
        if text.trim().is_empty() {
            return Err(ScoreError::EmptyInput);
        }
        let (mut lv, mut lb) = (0.0, 0.0);
        for (re, r) in &self.rules {
            if re.is_match(text) {
                if r.weight >= 0.0 {
                    lv += r.weight
                } else {
                    lb -= r.weight
                }
            }
        }
        Ok(LogitPair { lv, lb })
    }
}

/// Model service speaking the JSON contract in `docs/wire-protocol.md`.
#[derive(Debug, Clone)]
pub struct RemoteScorer {
    client: JsonClient,
    /// Class tokens requested from the service: vulnerable first, safe second.
    pub class_tokens: [String; 2],
}

impl RemoteScorer {
    pub const ENV_URL: &'static str = "CPGVULN_SCORER_URL";
    pub const ENV_TOKEN: &'static str = "CPGVULN_SCORER_TOKEN";

    pub fn new(endpoint: impl Into<String>, token: Option<String>, timeout: Duration) -> Self {
        RemoteScorer {
            client: JsonClient::new(endpoint, token, timeout),
            class_tokens: ["VULNERABLE".into(), "SAFE".into()],
        }
    }

    /// Endpoint and bearer token from the environment.
    pub fn from_env(timeout: Duration) -> Option<Self> {
        let url = std::env::var(Self::ENV_URL).ok()?;
        Some(Self::new(url, std::env::var(Self::ENV_TOKEN).ok(), timeout))
    }

    pub fn endpoint(&self) -> &str {
        self.client.endpoint()
    }
}

pub(crate) fn fill_prompt(template: &str, code: &str) -> String {
    template.replace("<Code>", code)
}

fn answer_logits(word: &str) -> Option<LogitPair<f64>> {
    match word.trim().trim_matches(|c: char| !c.is_ascii_alphabetic()).to_ascii_uppercase().as_str() {
        "VULNERABLE" => Some(LogitPair { lv: FALLBACK_LOGIT, lb: -FALLBACK_LOGIT }),
        "SAFE" | "BENIGN" => Some(LogitPair { lv: -FALLBACK_LOGIT, lb: FALLBACK_LOGIT }),
        _ => None,
    }
}

/// Decodes a scoring response: explicit logits or log-probabilities for the two
/// class tokens (keyed by name, or positional with `class_tokens`), else the
/// one-word `answer` fallback.
pub(crate) fn decode_response(v: &Value, tokens: &[String; 2]) -> Result<LogitPair<f64>, ScoreError> {
    let bad = |m: &str| ScoreError::BadResponse(m.to_string());
    for key in ["logits", "logprobs"] {
        let Some(field) = v.get(key) else { continue };
        let (lv, lb) = match field {
            Value::Object(m) => {
                let declared: Option<Vec<&str>> = v
                    .get("class_tokens")
                    .and_then(Value::as_array)
                    .map(|a| a.iter().filter_map(Value::as_str).collect());
                let names: Vec<&str> = match &declared {
                    Some(d) if d.len() == 2 => d.clone(),
                    _ => tokens.iter().map(String::as_str).collect(),
                };
                (m.get(names[0]).and_then(Value::as_f64), m.get(names[1]).and_then(Value::as_f64))
            }
            Value::Array(a) if a.len() == 2 => (a[0].as_f64(), a[1].as_f64()),
            _ => return Err(bad("`logits` must be an object or a two-element array")),
        };
        let (Some(lv), Some(lb)) = (lv, lb) else { return Err(bad("missing class-token logits")) };
        return LogitPair::new(lv, lb).map_err(|_| bad("non-finite logits"));
    }
    match v.get("answer").and_then(Value::as_str) {
        Some(w) => answer_logits(w).ok_or_else(|| bad(&format!("unrecognized answer `{w}`"))),
        None => Err(bad("response carries neither logits nor an answer")),
    }
}

impl Scorer for RemoteScorer {
    fn kind(&self) -> ScorerKind {
        ScorerKind::RemoteModelService
    }

    fn score(&self, text: &str) -> Result<LogitPair<f64>, ScoreError> {
        if text.trim().is_empty() {
            return Err(ScoreError::EmptyInput);
        }
        let body = json!({
            "prompt": fill_prompt(CLASSIFY_PROMPT, text),
            "class_tokens": self.class_tokens,
        });
        match self.client.post(&body) {
            Ok(v) => decode_response(&v, &self.class_tokens),
            Err(HttpFailure::Unavailable { retry_after, message }) => {
                Err(ScoreError::ServiceUnavailable { retry_after, message })
            }
            Err(HttpFailure::Rejected(m)) => Err(ScoreError::BadResponse(m)),
        }
    }
}
