mod common;

use common::{fixture, mini_corpus, read_fixture, SKB_PUT_QUERY};
use cpgvuln::cpg::build_cpg;
use cpgvuln::detector::{LocalHeuristic, LogitPair, ScoreError, Scorer, ScorerKind};
use cpgvuln::frontend::{parse, SourceUnit};
use cpgvuln::harness::*;
use cpgvuln::transforms::{TransformId, TransformSpec};
use std::collections::BTreeMap;

fn fixed(gamma: f64) -> RunConfig {
    RunConfig { threshold: ThresholdConfig { gamma: Some(gamma), ..Default::default() }, ..Default::default() }
}

fn run(records: &[DatasetRecord], cfg: &RunConfig) -> PipelineRun {
    run_pipeline(records, vec![], cfg, &TemplateQueryService, &LocalHeuristic::default()).unwrap()
}

fn record(id: &str, code: &str, label: u8) -> DatasetRecord {
    DatasetRecord { id: id.into(), code: code.into(), label, cwe: None, split: Split::Test }
}

#[test]
fn mini_corpus_ingests_twenty_balanced_records() {
    let recs = mini_corpus();
    assert_eq!(recs.len(), 20);
    assert_eq!(recs.iter().filter(|r| r.label == 1).count(), 10);
    assert_eq!(recs.iter().filter(|r| r.split == Split::Validation).count(), 6);
}

#[test]
fn ingest_reports_schema_problems_per_line() {
    let text = concat!(
        "{\"id\":\"a\",\"code\":\"int f(void){return 0;}\",\"label\":0}\n",
        "\n",
        "{\"id\":\"b\",\"code\":\"int g(void){return 1;}\"}\n",
        "{\"id\":\"c\",\"code\":\"x\",\"label\":2}\n",
        "{\"id\":\"a\",\"code\":\"int h(void){return 2;}\",\"label\":1}\n",
        "{\"id\":\"d\",\"code\":\"int k(void){return 3;}\",\"label\":1,\"split\":\"validation\",\"cwe\":\"CWE-787\"}\n",
        "not json\n",
    );
    let ing = ingest_str(text);
    let ids: Vec<&str> = ing.records.iter().map(|r| r.id.as_str()).collect();
    assert_eq!(ids, ["a", "d"]);
    assert_eq!(ing.records[1].split, Split::Validation);
    let lines: Vec<usize> = ing.rejects.iter().map(|r| r.line).collect();
    assert_eq!(lines, [3, 4, 5, 7]);
    assert!(ing.rejects[0].reason.contains("label"));
}

#[test]
fn two_line_file_gives_two_records() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("two.jsonl");
    std::fs::write(
        &p,
        "{\"id\":\"x\",\"code\":\"int f(int a){return a;}\",\"label\":1}\n{\"id\":\"y\",\"code\":\"int g(int b){return b;}\",\"label\":0}\n",
    )
    .unwrap();
    let (run, out) =
        run_dataset(&p, dir.path(), &fixed(0.5), &TemplateQueryService, &LocalHeuristic::default()).unwrap();
    assert_eq!(run.report.records.len(), 2);
    assert!(out.join("report.json").is_file());
}

fn dma_graph() -> (String, cpgvuln::cpg::CodePropertyGraph) {
    let src = read_fixture("dma_rx.c");
    let u = SourceUnit::new("dma_rx", src.clone());
    let g = build_cpg(&parse(&u).unwrap(), &u).unwrap();
    (src, g)
}

#[test]
fn retry_budget_is_three_attempts() {
    let (src, g) = dma_graph();
    let good = ScriptedService::envelope(&SKB_PUT_QUERY.lines().collect::<Vec<_>>());
    let bad = [
        "no json here".to_string(),
        ScriptedService::envelope(&["val x = cpg.call.name(\"skb_put\"", "x"]),
        ScriptedService::envelope(&["cpg.method.name(\"dma_rx\")"]),
    ];
    for failures in 0..=4usize {
        let mut outputs: Vec<String> = (0..failures).map(|i| bad[i % bad.len()].clone()).collect();
        outputs.push(good.clone());
        let svc = ScriptedService::new(outputs);
        let cfg = GenerationConfig { max_attempts: 9, ..Default::default() };
        let gen = generate_queries(&src, &g, &svc, &cfg).unwrap();
        let want = (failures + 1).min(3);
        assert_eq!(gen.attempts.len(), want, "failures = {failures}");
        assert_eq!(svc.calls(), want);
        assert_eq!(gen.discarded, failures >= 3);
        assert_eq!(gen.accepted().is_some(), failures < 3);
        let idx: Vec<u8> = gen.attempts.iter().map(|a| a.attempt_index).collect();
        assert_eq!(idx, (1..=want as u8).collect::<Vec<_>>());
    }
}

#[test]
fn failure_categories_are_recorded() {
    let (src, g) = dma_graph();
    let svc = ScriptedService::new(vec![
        "no json here".into(),
        ScriptedService::envelope(&["val x = cpg.call.name(\"skb_put\""]),
        ScriptedService::envelope(&["cpg.method.name(\"dma_rx\")"]),
    ]);
    let gen = generate_queries(&src, &g, &svc, &GenerationConfig::default()).unwrap();
    let cats: Vec<String> = gen
        .attempts
        .iter()
        .map(|a| match &a.outcome {
            AttemptOutcome::Error { category, .. } => category.clone(),
            AttemptOutcome::Valid { .. } => "VALID".into(),
        })
        .collect();
    assert_eq!(cats[0], "MALFORMED_MODEL_OUTPUT");
    assert_eq!(cats[1], "SYNTAX");
    assert_eq!(cats[2], "NOT_A_FLOW_QUERY");
}

#[test]
fn mini_corpus_report_matches_hand_count() {
    let run = run(&mini_corpus(), &fixed(0.5));
    let rows: BTreeMap<&str, &RecordRow> = run.report.records.iter().map(|r| (r.id.as_str(), r)).collect();
    assert!(rows.values().all(|r| r.status == RecordStatus::Ok));
    // Heuristic logits worked out by hand from the rule table.
    let expect = [
        ("v01_strcpy_name", 1),
        ("v02_gets_line", 1),
        ("v03_memcpy_len", 1),
        ("v04_sprintf_user", 1),
        ("v05_strcat_path", 1),
        ("v06_loop_copy", 0),
        ("v07_double_free", 1),
        ("v08_header_len", 1),
        ("v09_skb_len", 1),
        ("v10_system_cmd", 1),
        ("s01_strncpy_name", 0),
        ("s02_memcpy_checked", 0),
        ("s03_snprintf_user", 0),
        ("s04_add", 0),
        ("s05_strlcpy_path", 0),
        ("s06_loop_clamped", 0),
        ("s07_free_once", 0),
        ("s08_header_checked", 0),
        ("s09_strcpy_literal", 1),
        ("s10_skb_checked", 0),
    ];
    for (id, v) in expect {
        assert_eq!(rows[id].verdict, Some(v), "{id}");
    }
    assert_eq!(rows["v01_strcpy_name"].logits, Some(LogitPair { lv: 3.0, lb: 0.0 }));
    assert_eq!(rows["v06_loop_copy"].p_vuln, Some(0.5));
    let agg = &run.report.aggregates;
    assert_eq!((agg.records, agg.valid_queries, agg.discarded, agg.errors), (20, 20, 0, 0));
    let eval = agg.eval.unwrap();
    assert_eq!((eval.counts.tp, eval.counts.fn_, eval.counts.tn, eval.counts.fp), (9, 1, 9, 1));
    assert!((eval.accuracy - 0.9).abs() < 1e-12);
    assert_eq!(run.report.exit_code(), 0);
}

#[test]
fn calibration_split_is_held_out() {
    let cfg = RunConfig {
        threshold: ThresholdConfig { calibrate_on: Some(Split::Validation), ..Default::default() },
        ..Default::default()
    };
    let run = run(&mini_corpus(), &cfg);
    assert_eq!(run.report.calibration_split, Some(Split::Validation));
    assert_eq!(run.report.aggregates.eval.unwrap().counts.total(), 14);
    // Validation p: s02 0.182, v06 0.5, s04 0.5, v09 0.731, v01 0.953, s09 0.953.
    // Best is 4/6, reached first just above s02, so γ is the grid point after p(s02).
    let ps02 = LogitPair { lv: 1.5, lb: 3.0 }.probabilities().0;
    let gamma = run.report.gamma.unwrap();
    assert!(gamma >= ps02 && gamma - ps02 < 0.001);
    assert!((gamma - 0.183).abs() < 1e-12);
}

#[test]
fn bundled_dataset_threshold_applies() {
    let cfg = RunConfig {
        threshold: ThresholdConfig { dataset: Some("PrimeVul".into()), ..Default::default() },
        ..Default::default()
    };
    let run = run(&mini_corpus(), &cfg);
    assert_eq!(run.report.gamma, Some(0.594));
    assert_eq!(run.report.gamma_source, "dataset:primevul");
}

#[test]
fn reports_are_byte_identical_across_runs_and_workers() {
    let recs = mini_corpus();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let one = RunConfig { workers: 1, ..fixed(0.5) };
    let many = RunConfig { workers: 8, ..fixed(0.5) };
    let da = write_run(&run(&recs, &one), a.path()).unwrap();
    let db = write_run(&run(&recs, &many), b.path()).unwrap();
    let read = |d: &std::path::Path, f: &str| std::fs::read(d.join(f)).unwrap();
    assert_eq!(read(&da, "report.json"), read(&db, "report.json"));
    assert_eq!(read(&da, "slices/v09_skb_len.c"), read(&db, "slices/v09_skb_len.c"));
    assert_eq!(read(&da, "graphs/v01_strcpy_name.json"), read(&db, "graphs/v01_strcpy_name.json"));
}

#[test]
fn comment_removal_keeps_slices_and_verdicts() {
    let recs = mini_corpus();
    let base = run(&recs, &fixed(0.5));
    let t4 = run(&recs, &RunConfig { transform: Some(TransformSpec { id: TransformId::T4, seed: 0 }), ..fixed(0.5) });
    for (x, y) in base.artifacts.iter().zip(&t4.artifacts) {
        assert_eq!(x.slice, y.slice, "{}", x.id);
    }
    for (x, y) in base.report.records.iter().zip(&t4.report.records) {
        assert_eq!(x.verdict, y.verdict, "{}", x.id);
    }
}

#[test]
fn one_bad_record_does_not_stop_the_rest() {
    let mut recs = mini_corpus();
    recs.insert(3, record("broken", "int f( {", 1));
    let run = run(&recs, &fixed(0.5));
    let bad = run.report.records.iter().find(|r| r.id == "broken").unwrap();
    assert_eq!(bad.status, RecordStatus::Error);
    assert!(bad.error.as_deref().unwrap().starts_with("cpg:"));
    assert_eq!(run.report.records.iter().filter(|r| r.status == RecordStatus::Ok).count(), 20);
    assert_eq!(run.report.aggregates.errors, 1);
    assert_eq!(run.report.exit_code(), 2);
}

struct Down;

impl QueryService for Down {
    fn complete(&self, _: &QueryRequest<'_>) -> Result<String, ServiceError> {
        Err(ServiceError::Unavailable {
            retry_after: Some(std::time::Duration::from_secs(5)),
            message: "maintenance".into(),
        })
    }
}

struct Refuses;

impl Scorer for Refuses {
    fn kind(&self) -> ScorerKind {
        ScorerKind::RemoteModelService
    }
    fn score(&self, _: &str) -> Result<LogitPair<f64>, ScoreError> {
        Err(ScoreError::ServiceUnavailable { retry_after: None, message: "offline".into() })
    }
}

#[test]
fn service_outages_become_record_errors() {
    let recs = &mini_corpus()[..4];
    let r = run_pipeline(recs, vec![], &fixed(0.5), &Down, &LocalHeuristic::default()).unwrap();
    assert!(r.report.records.iter().all(|r| r.status == RecordStatus::Error));
    let r = run_pipeline(recs, vec![], &fixed(0.5), &TemplateQueryService, &Refuses).unwrap();
    assert!(r.report.records.iter().all(|r| r.error.as_deref().is_some_and(|e| e.starts_with("score:"))));
    assert!(r.report.aggregates.eval.is_none());
}

#[test]
fn empty_dataset_is_a_warning_not_a_failure() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("empty.jsonl");
    std::fs::write(&p, "").unwrap();
    let (run, out) =
        run_dataset(&p, dir.path(), &fixed(0.5), &TemplateQueryService, &LocalHeuristic::default()).unwrap();
    assert!(run.report.records.is_empty());
    assert_eq!(run.report.warnings, ["dataset is empty"]);
    assert_eq!(run.report.exit_code(), 0);
    assert!(out.join("report.json").is_file());
}

#[test]
fn output_layout() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig { name: "layout".into(), ..fixed(0.5) };
    let (run, out) =
        run_dataset(&fixture("mini_corpus.jsonl"), dir.path(), &cfg, &TemplateQueryService, &LocalHeuristic::default())
            .unwrap();
    assert_eq!(out, dir.path().join("layout"));
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["records"].as_array().unwrap().len(), 20);
    assert_eq!(report["aggregates"]["eval"]["counts"]["fn"], 1);
    let slices = std::fs::read_dir(out.join("slices")).unwrap().count();
    assert_eq!(slices, run.artifacts.iter().filter(|a| a.slice.is_some()).count());
    assert_eq!(std::fs::read_dir(out.join("graphs")).unwrap().count(), 20);
    assert_eq!(std::fs::read_to_string(out.join("rejects.jsonl")).unwrap(), "");
}

#[test]
fn configuration_is_validated() {
    assert!(RunConfig::from_toml("name = \"x\"\n").is_err(), "no threshold source");
    assert!(RunConfig::from_toml("[threshold]\ngamma = 1.2\n").is_err());
    assert!(RunConfig::from_toml("[threshold]\ndataset = \"nope\"\n").is_err());
    assert!(RunConfig::from_toml("workers = 0\n[threshold]\ngamma = 0.5\n").is_err());
    assert!(RunConfig::from_toml("name = \"../up\"\n[threshold]\ngamma = 0.5\n").is_err());
    assert!(RunConfig::from_toml("colour = 1\n[threshold]\ngamma = 0.5\n").is_err());
    let c = RunConfig::from_toml(
        "name = \"t4\"\nworkers = 2\n[threshold]\ncalibrate_on = \"validation\"\n[transform]\nid = \"T4\"\nseed = 3\n[generation]\nmax_attempts = 2\n",
    )
    .unwrap();
    assert_eq!(c.transform, Some(TransformSpec { id: TransformId::T4, seed: 3 }));
    assert_eq!(c.generation.max_attempts, 2);
}
