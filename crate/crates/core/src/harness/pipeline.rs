//! End-to-end run: transform → CPG → queries → paths → slice → score → verdict.

use super::dataset::{DatasetRecord, SchemaError, Split};
use super::querygen::{generate_queries, GenerationConfig, QueryAttempt, QueryService};
use crate::cpg::{build_cpg, save_cpg, CodePropertyGraph};
use crate::detector::{
    aggregate_max, calibrate, classify, Confusion, EvalReport, LogitPair, Scorer, Thresholds, DEFAULT_GRID_STEP,
};
use crate::frontend::{parse, strip_comments, SourceUnit};
use crate::query::{eval_query_with, parse_query, QueryValue};
use crate::slicer::slice_flows;
use crate::transforms::{apply, TransformSpec};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("I/O error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io { path: path.to_path_buf(), source }
}

/// Where γ comes from; the first field set wins, in declaration order.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ThresholdConfig {
    pub gamma: Option<f64>,
    /// Name looked up in the bundled threshold table.
    pub dataset: Option<String>,
    /// Calibrate on the records of this split.
    pub calibrate_on: Option<Split>,
    pub grid_step: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub name: String,
    pub threshold: ThresholdConfig,
    pub transform: Option<TransformSpec>,
    pub workers: usize,
    pub generation: GenerationConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            name: "run".into(),
            threshold: ThresholdConfig::default(),
            transform: None,
            workers: 4,
            generation: GenerationConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let c = Self::parse_toml(text)?;
        c.validate()?;
        Ok(c)
    }

    /// Decodes without [`validate`](Self::validate), for callers that fill in
    /// fields before running.
    pub fn parse_toml(text: &str) -> Result<Self, HarnessError> {
        toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let t = &self.threshold;
        if t.gamma.is_none() && t.dataset.is_none() && t.calibrate_on.is_none() {
            return Err(HarnessError::Config(
                "set threshold.gamma, threshold.dataset or threshold.calibrate_on".into(),
            ));
        }
        if let Some(g) = t.gamma.filter(|g| !(0.0..=1.0).contains(g)) {
            return Err(HarnessError::Config(format!("gamma {g} outside [0, 1]")));
        }
        if let Some(d) = t.gamma.is_none().then_some(t.dataset.as_deref()).flatten() {
            if Thresholds::bundled().get(d).is_none() {
                return Err(HarnessError::Config(format!("no bundled threshold for dataset `{d}`")));
            }
        }
        if self.workers == 0 {
            return Err(HarnessError::Config("workers must be at least 1".into()));
        }
        if self.name.is_empty() || self.name.contains(['/', '\\']) || self.name.starts_with('.') {
            return Err(HarnessError::Config(format!("invalid run name `{}`", self.name)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordStatus {
    Ok,
    /// No valid query within the attempt budget.
    Discarded,
    Error,
}

/// Text the verdict was computed from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreBasis {
    Slice,
    /// No paths (or no accepted query): the comment-free unit was scored.
    Unit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordRow {
    pub id: String,
    pub label: u8,
    pub split: Split,
    pub status: RecordStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub attempts: Vec<QueryAttempt>,
    pub paths: usize,
    pub paths_truncated: bool,
    pub slice_loc: Option<u32>,
    pub original_loc: Option<u32>,
    pub reduction_pct: Option<f64>,
    pub basis: Option<ScoreBasis>,
    pub logits: Option<LogitPair<f64>>,
    pub p_vuln: Option<f64>,
    pub verdict: Option<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub records: usize,
    pub valid_queries: usize,
    pub empty_result_queries: usize,
    pub discarded: usize,
    pub errors: usize,
    pub mean_reduction_pct: Option<f64>,
    pub eval: Option<EvalReport<f64>>,
}

impl Aggregates {
    /// Recomputes every aggregate from the rows; `eval_rows` selects the rows
    /// that enter the evaluation.
    pub fn from_rows(rows: &[RecordRow], eval_rows: impl Fn(&RecordRow) -> bool) -> Self {
        let valid: Vec<&QueryAttempt> =
            rows.iter().filter_map(|r| r.attempts.last().filter(|a| a.is_valid())).collect();
        let reductions: Vec<f64> = rows.iter().filter_map(|r| r.reduction_pct).collect();
        let mut confusion = Confusion::default();
        for r in rows.iter().filter(|r| eval_rows(r)) {
            if let Some(v) = r.verdict {
                confusion.record(v, r.label == 1);
            }
        }
        Aggregates {
            records: rows.len(),
            valid_queries: valid.len(),
            empty_result_queries: valid
                .iter()
                .filter(|a| matches!(a.outcome, super::querygen::AttemptOutcome::Valid { empty_result: true, .. }))
                .count(),
            discarded: rows.iter().filter(|r| r.status == RecordStatus::Discarded).count(),
            errors: rows.iter().filter(|r| r.status == RecordStatus::Error).count(),
            mean_reduction_pct: (!reductions.is_empty())
                .then(|| reductions.iter().sum::<f64>() / reductions.len() as f64),
            eval: EvalReport::from_counts(confusion).ok(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub run: String,
    pub gamma: Option<f64>,
    pub gamma_source: String,
    /// Records excluded from evaluation because γ was calibrated on them.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub calibration_split: Option<Split>,
    pub transform: Option<TransformSpec>,
    pub records: Vec<RecordRow>,
    pub aggregates: Aggregates,
    pub rejects: Vec<SchemaError>,
    pub warnings: Vec<String>,
}

impl PipelineReport {
    /// 0 when everything succeeded, 2 when any record failed or was discarded
    /// or any input line was rejected.
    pub fn exit_code(&self) -> i32 {
        let a = &self.aggregates;
        if a.errors > 0 || a.discarded > 0 || !self.rejects.is_empty() {
            2
        } else {
            0
        }
    }
}

/// Per-record artifacts kept next to the report.
#[derive(Debug, Clone)]
pub struct RecordArtifacts {
    pub id: String,
    pub slice: Option<String>,
    pub graph: Option<CodePropertyGraph>,
}

#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub report: PipelineReport,
    pub artifacts: Vec<RecordArtifacts>,
}

fn empty_row(r: &DatasetRecord) -> RecordRow {
    RecordRow {
        id: r.id.clone(),
        label: r.label,
        split: r.split,
        status: RecordStatus::Ok,
        error: None,
        attempts: Vec::new(),
        paths: 0,
        paths_truncated: false,
        slice_loc: None,
        original_loc: None,
        reduction_pct: None,
        basis: None,
        logits: None,
        p_vuln: None,
        verdict: None,
    }
}

/// Everything up to scoring; classification waits for γ.
fn process(
    r: &DatasetRecord,
    cfg: &RunConfig,
    service: &dyn QueryService,
    scorer: &dyn Scorer,
) -> (RecordRow, RecordArtifacts) {
    let mut row = empty_row(r);
    let mut art = RecordArtifacts { id: r.id.clone(), slice: None, graph: None };
    let fail = |mut row: RecordRow, e: String| {
        row.status = RecordStatus::Error;
        row.error = Some(e);
        row
    };
    let mut unit = SourceUnit::new(r.id.clone(), &r.code);
    if let Some(t) = cfg.transform {
        match apply(t, &unit) {
            Ok(out) => unit = out.unit,
            Err(e) => return (fail(row, format!("transform: {e}")), art),
        }
    }
    let g = match parse(&unit).map_err(|e| e.to_string()).and_then(|a| build_cpg(&a, &unit).map_err(|e| e.to_string()))
    {
        Ok(g) => g,
        Err(e) => return (fail(row, format!("cpg: {e}")), art),
    };
    let generation = match generate_queries(&unit.text, &g, service, &cfg.generation) {
        Ok(q) => q,
        Err(e) => {
            art.graph = Some(g);
            return (fail(row, format!("query generation: {e}")), art);
        }
    };
    row.attempts = generation.attempts.clone();
    if generation.discarded {
        row.status = RecordStatus::Discarded;
    }
    let mut text = None;
    if let Some(acc) = generation.accepted() {
        let flows = parse_query(&acc.query_text)
            .ok()
            .and_then(|s| eval_query_with(&s, &g, &cfg.generation.eval.into()).ok())
            .and_then(|v| if let QueryValue::Flows(f) = v { Some(f) } else { None });
        if let Some(f) = flows.filter(|f| !f.is_empty()) {
            row.paths = f.len();
            row.paths_truncated = f.truncated;
            match slice_flows(&f.paths, &g, &unit) {
                Ok(s) => {
                    row.slice_loc = Some(s.slice_loc);
                    row.original_loc = Some(s.original_loc);
                    row.reduction_pct = Some(s.reduction_pct);
                    row.paths_truncated |= s.truncated;
                    art.slice = Some(s.rendered_text.clone());
                    text = Some((ScoreBasis::Slice, s.rendered_text));
                }
                Err(e) => {
                    art.graph = Some(g);
                    return (fail(row, format!("slice: {e}")), art);
                }
            }
        }
    }
    art.graph = Some(g);
    let (basis, text) = text.unwrap_or_else(|| (ScoreBasis::Unit, strip_comments(&unit).text));
    // One slice per record today; the max keeps multi-slice scoring well defined.
    match scorer.score(&text) {
        Ok(lp) => {
            row.basis = Some(basis);
            row.logits = Some(lp);
            row.p_vuln = aggregate_max([lp.probabilities().0]);
        }
        Err(e) => return (fail(row, format!("score: {e}")), art),
    }
    (row, art)
}

/// Runs every record; one record's failure never stops the others.
pub fn run_pipeline(
    records: &[DatasetRecord],
    rejects: Vec<SchemaError>,
    cfg: &RunConfig,
    service: &dyn QueryService,
    scorer: &dyn Scorer,
) -> Result<PipelineRun, HarnessError> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| HarnessError::Config(e.to_string()))?;
    let (mut rows, artifacts): (Vec<RecordRow>, Vec<RecordArtifacts>) =
        pool.install(|| records.par_iter().map(|r| process(r, cfg, service, scorer)).unzip());
    let mut warnings = Vec::new();
    if records.is_empty() {
        warnings.push("dataset is empty".to_string());
    }
    let t = &cfg.threshold;
    let (gamma, gamma_source, calibration_split) = if let Some(g) = t.gamma {
        (Some(g), "fixed".to_string(), None)
    } else if let Some(d) = &t.dataset {
        (Thresholds::bundled().get(d), format!("dataset:{}", d.to_ascii_lowercase()), None)
    } else {
        let split = t.calibrate_on.expect("validated");
        let samples: Vec<(LogitPair<f64>, bool)> =
            rows.iter().filter(|r| r.split == split).filter_map(|r| Some((r.logits?, r.label == 1))).collect();
        match calibrate(&samples, t.grid_step.unwrap_or(DEFAULT_GRID_STEP)) {
            Ok(c) => (Some(c.gamma), format!("calibrated:{split}"), Some(split)),
            Err(e) => {
                warnings.push(format!("calibration on split `{split}` failed: {e}"));
                (None, format!("calibrated:{split}"), Some(split))
            }
        }
    };
    if let Some(g) = gamma {
        for r in &mut rows {
            if let Some(lp) = r.logits {
                r.verdict = classify(lp, g).ok().map(|v| v.label);
            }
        }
    }
    let aggregates = Aggregates::from_rows(&rows, |r| Some(r.split) != calibration_split);
    Ok(PipelineRun {
        report: PipelineReport {
            run: cfg.name.clone(),
            gamma,
            gamma_source,
            calibration_split,
            transform: cfg.transform,
            records: rows,
            aggregates,
            rejects,
            warnings,
        },
        artifacts,
    })
}

/// File-system safe form of a record id.
pub fn artifact_stem(id: &str) -> String {
    id.chars().map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') { c } else { '_' }).collect()
}

/// Writes `<root>/<run>/{report.json, slices/, graphs/, rejects.jsonl}` and
/// returns the run directory.
pub fn write_run(run: &PipelineRun, root: &Path) -> Result<PathBuf, HarnessError> {
    let dir = root.join(&run.report.run);
    let slices = dir.join("slices");
    let graphs = dir.join("graphs");
    for d in [&slices, &graphs] {
        std::fs::create_dir_all(d).map_err(io_err(d))?;
    }
    let report = dir.join("report.json");
    let mut json = serde_json::to_string_pretty(&run.report).expect("report serializes");
    json.push('\n');
    std::fs::write(&report, json).map_err(io_err(&report))?;
    let rejects = dir.join("rejects.jsonl");
    let mut f = std::fs::File::create(&rejects).map_err(io_err(&rejects))?;
    for r in &run.report.rejects {
        writeln!(f, "{}", serde_json::to_string(r).expect("reject serializes")).map_err(io_err(&rejects))?;
    }
    for a in &run.artifacts {
        let stem = artifact_stem(&a.id);
        if let Some(s) = &a.slice {
            let p = slices.join(format!("{stem}.c"));
            std::fs::write(&p, s).map_err(io_err(&p))?;
        }
        if let Some(g) = &a.graph {
            let p = graphs.join(format!("{stem}.json"));
            let file = std::fs::File::create(&p).map_err(io_err(&p))?;
            save_cpg(g, std::io::BufWriter::new(file))
                .map_err(|e| HarnessError::Io { path: p.clone(), source: std::io::Error::other(e.to_string()) })?;
        }
    }
    Ok(dir)
}

/// Ingests `dataset`, runs, and writes the run directory under `root`.
pub fn run_dataset(
    dataset: &Path,
    root: &Path,
    cfg: &RunConfig,
    service: &dyn QueryService,
    scorer: &dyn Scorer,
) -> Result<(PipelineRun, PathBuf), HarnessError> {
    let ing = super::dataset::ingest(dataset).map_err(io_err(dataset))?;
    let run = run_pipeline(&ing.records, ing.rejects, cfg, service, scorer)?;
    let dir = write_run(&run, root)?;
    Ok((run, dir))
}
