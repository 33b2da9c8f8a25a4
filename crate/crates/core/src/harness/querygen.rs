//! Query generation against a model service with a validate-and-retry loop.

use crate::cpg::CodePropertyGraph;
use crate::http::{HttpFailure, JsonClient};
use crate::query::{eval_query_with, parse_query, Advisory, EvalError, EvalOptions, QueryValue};
use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use std::sync::Mutex;
use std::time::Duration;
use thiserror::Error;

/// Generation prompt; `<Code>` is replaced by the record's source.
pub const GENERATE_PROMPT: &str = include_str!("../../prompts/generate_queries.txt");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationConfig {
    /// Total attempts including the first; clamped to `1..=MAX_ATTEMPTS`.
    pub max_attempts: u8,
    pub context_budget_tokens: usize,
    /// Length heuristic: one token per this many characters, rounded up.
    pub chars_per_token: usize,
    pub eval: EvalOptionsConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalOptionsConfig {
    pub max_len: usize,
    pub max_paths: usize,
}

impl Default for EvalOptionsConfig {
    fn default() -> Self {
        let d = EvalOptions::default();
        EvalOptionsConfig { max_len: d.max_len, max_paths: d.max_paths }
    }
}

impl From<EvalOptionsConfig> for EvalOptions {
    fn from(c: EvalOptionsConfig) -> Self {
        EvalOptions { max_len: c.max_len, max_paths: c.max_paths }
    }
}

impl Default for GenerationConfig {
    fn default() -> Self {
        GenerationConfig {
            max_attempts: 3,
            context_budget_tokens: 32_000,
            chars_per_token: 4,
            eval: Default::default(),
        }
    }
}

/// Hard upper bound on attempts per record.
pub const MAX_ATTEMPTS: u8 = 3;

pub fn approx_tokens(text: &str, chars_per_token: usize) -> usize {
    text.chars().count().div_ceil(chars_per_token.max(1))
}

/// What a service is asked for on one attempt.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryRequest<'a> {
    pub prompt: String,
    pub code: &'a str,
    /// 1-based.
    pub attempt: u8,
    /// Error text from the previous attempt.
    pub feedback: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ServiceError {
    #[error("query service unavailable: {message}")]
    Unavailable { retry_after: Option<Duration>, message: String },
    #[error("query service rejected the request: {0}")]
    Rejected(String),
}

pub trait QueryService: Send + Sync {
    /// Raw model output text.
    fn complete(&self, req: &QueryRequest<'_>) -> Result<String, ServiceError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum AttemptOutcome {
    Valid {
        /// Executed without error but produced no paths.
        empty_result: bool,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        advisories: Vec<Advisory>,
    },
    Error {
        category: String,
        message: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryAttempt {
    pub attempt_index: u8,
    pub query_text: String,
    pub outcome: AttemptOutcome,
}

impl QueryAttempt {
    pub fn is_valid(&self) -> bool {
        matches!(self.outcome, AttemptOutcome::Valid { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryGeneration {
    pub attempts: Vec<QueryAttempt>,
    pub discarded: bool,
}

impl QueryGeneration {
    pub fn accepted(&self) -> Option<&QueryAttempt> {
        self.attempts.last().filter(|a| a.is_valid())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QueryGenError {
    #[error("prompt needs ~{tokens} tokens, budget is {budget}")]
    ContextExceeded { tokens: usize, budget: usize },
    #[error(transparent)]
    Service(#[from] ServiceError),
}

/// Error category recorded for output that does not follow `{"queries": [...]}`.
pub const MALFORMED_MODEL_OUTPUT: &str = "MALFORMED_MODEL_OUTPUT";
pub const EVAL_FAILURE: &str = "EVAL";
pub const NOT_A_FLOW: &str = "NOT_A_FLOW_QUERY";

/// Extracts the query list from model output, tolerating code fences and
/// surrounding prose.
pub fn parse_model_output(raw: &str) -> Result<Vec<String>, String> {
    let (Some(a), Some(b)) = (raw.find('{'), raw.rfind('}')) else {
        return Err("no JSON object in model output".into());
    };
    if b < a {
        return Err("no JSON object in model output".into());
    }
    let v: Value = serde_json::from_str(&raw[a..=b]).map_err(|e| format!("invalid JSON: {e}"))?;
    let qs = v.get("queries").and_then(Value::as_array).ok_or("missing `queries` array")?;
    let qs: Vec<String> = qs
        .iter()
        .map(|q| q.as_str().map(str::to_string))
        .collect::<Option<_>>()
        .ok_or("`queries` must contain strings")?;
    if qs.is_empty() || qs.iter().all(|q| q.trim().is_empty()) {
        return Err("`queries` is empty".into());
    }
    Ok(qs)
}

/// Parses and dry-runs a query script against `g`.
pub fn validate_query(script: &str, g: &CodePropertyGraph, opts: EvalOptions) -> AttemptOutcome {
    let err = |category: &str, message: String| AttemptOutcome::Error { category: category.into(), message };
    let parsed = match parse_query(script) {
        Ok(p) => p,
        Err(e) => return err(&e.category.to_string(), e.to_string()),
    };
    match eval_query_with(&parsed, g, &opts) {
        Ok(QueryValue::Flows(f)) => AttemptOutcome::Valid { empty_result: f.is_empty(), advisories: parsed.advisories },
        Ok(other) => {
            err(NOT_A_FLOW, format!("final query yields a {}, expected flows from reachableByFlows", other.type_name()))
        }
        Err(e @ EvalError::UndefinedBinding { .. }) | Err(e @ EvalError::Runtime { .. }) => {
            err(EVAL_FAILURE, e.to_string())
        }
    }
}

fn retry_prompt(base: &str, previous: &str, outcome: &AttemptOutcome) -> String {
    let AttemptOutcome::Error { category, message } = outcome else { return base.to_string() };
    format!(
        "{base}\nYour previous answer was:\n{previous}\n\nIt failed validation with error {category}: {message}\nReturn corrected queries in the same JSON format.\n"
    )
}

/// Up to `max_attempts` rounds of generate → parse → validate; failed rounds
/// feed their error back into the next prompt.
pub fn generate_queries(
    code: &str,
    g: &CodePropertyGraph,
    service: &dyn QueryService,
    cfg: &GenerationConfig,
) -> Result<QueryGeneration, QueryGenError> {
    let base = crate::detector::fill_prompt(GENERATE_PROMPT, code);
    let tokens = approx_tokens(&base, cfg.chars_per_token);
    if tokens > cfg.context_budget_tokens {
        return Err(QueryGenError::ContextExceeded { tokens, budget: cfg.context_budget_tokens });
    }
    let mut attempts: Vec<QueryAttempt> = Vec::new();
    let mut prompt = base.clone();
    let mut feedback = None;
    for attempt in 1..=cfg.max_attempts.clamp(1, MAX_ATTEMPTS) {
        let raw =
            service.complete(&QueryRequest { prompt: prompt.clone(), code, attempt, feedback: feedback.take() })?;
        let (query_text, outcome) = match parse_model_output(&raw) {
            Ok(qs) => {
                let text = qs.join("\n");
                let o = validate_query(&text, g, cfg.eval.into());
                (text, o)
            }
            Err(m) => (raw.clone(), AttemptOutcome::Error { category: MALFORMED_MODEL_OUTPUT.into(), message: m }),
        };
        let ok = matches!(outcome, AttemptOutcome::Valid { .. });
        if let AttemptOutcome::Error { category, message } = &outcome {
            feedback = Some(format!("{category}: {message}"));
        }
        prompt = retry_prompt(&base, &raw, &outcome);
        attempts.push(QueryAttempt { attempt_index: attempt, query_text, outcome });
        if ok {
            return Ok(QueryGeneration { attempts, discarded: false });
        }
    }
    Ok(QueryGeneration { attempts, discarded: true })
}

/// Offline stand-in for a query-writing model: sources are the function
/// parameters, sinks the memory/string calls present in the code (all calls
/// when there are none).
#[derive(Debug, Clone, Default)]
pub struct TemplateQueryService;

const SINKS: &[&str] = &[
    "memcpy", "memmove", "memset", "strcpy", "strncpy", "strcat", "strncat", "sprintf", "snprintf", "vsprintf", "gets",
    "fgets", "scanf", "sscanf", "read", "recv", "skb_put", "malloc", "realloc", "free", "system",
];

impl QueryService for TemplateQueryService {
    fn complete(&self, req: &QueryRequest<'_>) -> Result<String, ServiceError> {
        let text = crate::frontend::strip_str(req.code).0;
        let call = Regex::new(r"\b([A-Za-z_][A-Za-z0-9_]*)\s*\(").expect("static regex");
        let mut found: Vec<&str> = call
            .captures_iter(&text)
            .filter_map(|c| c.get(1))
            .map(|m| m.as_str())
            .filter(|n| SINKS.contains(n))
            .collect();
        found.sort_unstable();
        found.dedup();
        let sink = if found.is_empty() {
            "val sink = cpg.call".to_string()
        } else {
            format!("val sink = cpg.call.name(\"{}\")", found.join("|"))
        };
        Ok(json!({
            "queries": ["val source = cpg.parameter", sink, "val execution_paths = sink.reachableByFlows(source)"]
        })
        .to_string())
    }
}

/// Replays canned outputs in order; the last one repeats once exhausted.
#[derive(Debug)]
pub struct ScriptedService {
    outputs: Vec<String>,
    next: Mutex<usize>,
}

impl ScriptedService {
    pub fn new(outputs: Vec<String>) -> Self {
        assert!(!outputs.is_empty(), "at least one scripted output");
        ScriptedService { outputs, next: Mutex::new(0) }
    }

    /// `queries` wrapped in the expected JSON envelope.
    pub fn envelope(queries: &[&str]) -> String {
        json!({ "queries": queries }).to_string()
    }

    pub fn calls(&self) -> usize {
        *self.next.lock().expect("lock")
    }
}

impl QueryService for ScriptedService {
    fn complete(&self, _req: &QueryRequest<'_>) -> Result<String, ServiceError> {
        let mut n = self.next.lock().expect("lock");
        let out = self.outputs[(*n).min(self.outputs.len() - 1)].clone();
        *n += 1;
        Ok(out)
    }
}

/// Remote query service: `POST {"prompt", "attempt"}` answered by
/// `{"completion": "<model text>"}`.
#[derive(Debug, Clone)]
pub struct HttpQueryService {
    client: JsonClient,
}

impl HttpQueryService {
    pub const ENV_URL: &'static str = "CPGVULN_QUERYGEN_URL";
    pub const ENV_TOKEN: &'static str = "CPGVULN_QUERYGEN_TOKEN";

    pub fn new(endpoint: impl Into<String>, token: Option<String>, timeout: Duration) -> Self {
        HttpQueryService { client: JsonClient::new(endpoint, token, timeout) }
    }

    pub fn from_env(timeout: Duration) -> Option<Self> {
        let url = std::env::var(Self::ENV_URL).ok()?;
        Some(Self::new(url, std::env::var(Self::ENV_TOKEN).ok(), timeout))
    }
}

impl QueryService for HttpQueryService {
    fn complete(&self, req: &QueryRequest<'_>) -> Result<String, ServiceError> {
        let v = self.client.post(&json!({ "prompt": req.prompt, "attempt": req.attempt })).map_err(|e| match e {
            HttpFailure::Unavailable { retry_after, message } => ServiceError::Unavailable { retry_after, message },
            HttpFailure::Rejected(m) => ServiceError::Rejected(m),
        })?;
        match v.get("completion").and_then(Value::as_str) {
            Some(s) => Ok(s.to_string()),
            // A service may answer with the query object itself.
            None => Ok(v.to_string()),
        }
    }
}
