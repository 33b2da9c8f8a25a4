use serde_json::Value;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures").join(name)
}

fn cpgvuln(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cpgvuln")).args(args).current_dir(cwd).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SKB_PUT_QUERY: &str = r#"val source = cpg.identifier.name("len")
val sink = cpg.call.name("skb_put").where(_.argument.order(2).codeExact("len + ring->frameoffset"))
val execution_paths = sink.reachableByFlows(source)"#;

#[test]
fn ingest_summarizes_and_flags_rejects() {
    let dir = tempfile::tempdir().unwrap();
    let o = cpgvuln(&["ingest", s(&fixture("mini_corpus.jsonl"))], dir.path());
    assert_eq!(code(&o), 0);
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!((v["records"].as_u64(), v["vulnerable"].as_u64(), v["safe"].as_u64()), (Some(20), Some(10), Some(10)));

    let bad = dir.path().join("bad.jsonl");
    std::fs::write(
        &bad,
        "{\"id\":\"a\",\"code\":\"int f(void){return 0;}\",\"label\":0}\n{\"id\":\"b\",\"code\":\"x\"}\n",
    )
    .unwrap();
    let rejects = dir.path().join("rejects.jsonl");
    let o = cpgvuln(&["ingest", s(&bad), "--rejects", s(&rejects)], dir.path());
    assert_eq!(code(&o), 2);
    let line: Value = serde_json::from_str(std::fs::read_to_string(&rejects).unwrap().trim()).unwrap();
    assert_eq!(line["line"], 2);
}

#[test]
fn query_and_slice_the_driver() {
    let dir = tempfile::tempdir().unwrap();
    let dma = fixture("dma_rx.c");
    let o = cpgvuln(&["query", s(&dma), "-e", SKB_PUT_QUERY], dir.path());
    assert_eq!(code(&o), 0);
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["type"], "flow set");
    let paths = v["paths"].as_array().unwrap();
    assert!(!paths.is_empty());
    assert!(paths.iter().all(|p| p.as_array().unwrap().last().unwrap()["name"] == "skb_put"));

    let q = dir.path().join("q.sc");
    std::fs::write(&q, SKB_PUT_QUERY).unwrap();
    let out = dir.path().join("slice.c");
    let o = cpgvuln(&["slice", s(&dma), "-f", s(&q), "-o", s(&out)], dir.path());
    assert_eq!(code(&o), 0);
    let text = std::fs::read_to_string(&out).unwrap();
    assert!(text.contains("skb_put(skb, len + ring->frameoffset);"));
    assert!(String::from_utf8_lossy(&o.stderr).contains("reduction"));
}

#[test]
fn saved_graphs_can_be_queried() {
    let dir = tempfile::tempdir().unwrap();
    let g = dir.path().join("g.json");
    assert_eq!(code(&cpgvuln(&["build-cpg", s(&fixture("skb_rx.c")), "-o", s(&g)], dir.path())), 0);
    let o = cpgvuln(&["query", s(&g), "-e", "cpg.method.name"], dir.path());
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["values"], serde_json::json!(["dma_rx"]));
}

#[test]
fn query_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let o = cpgvuln(&["query", s(&fixture("dma_rx.c")), "-e", "cpg.call.argument.typeFullName(\"float\")"], dir.path());
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("TYPE_MISUSE"));
}

#[test]
fn transform_writes_unit_and_provenance() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("u.c");
    std::fs::copy(fixture("skb_rx.c"), &src).unwrap();
    let o = cpgvuln(&["transform", s(&src), "--t3", "--seed", "5"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let out = std::fs::read_to_string(dir.path().join("u.t3.c")).unwrap();
    assert!(out.contains("dma_rx_impl("));
    let prov: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("u.t3.c.provenance.json")).unwrap()).unwrap();
    assert_eq!(prov["transform"], "T3");
    assert_eq!(prov["seed"], 5);
    assert_eq!(prov["line_map"][0], serde_json::json!([1, 1]));
    // Exactly one transformation per call.
    assert_eq!(code(&cpgvuln(&["transform", s(&src)], dir.path())), 1);
}

#[test]
fn metrics_with_histogram() {
    let dir = tempfile::tempdir().unwrap();
    let o = cpgvuln(&["metrics", s(&fixture("skb_rx.c")), "--bin-by", "cc", "--edges", "1,4,8"], dir.path());
    assert_eq!(code(&o), 0);
    let lines: Vec<Value> = stdout(&o).lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines[0]["metrics"]["cc"], 4);
    assert_eq!(lines[1]["histogram"]["counts"], serde_json::json!([0, 1]));
}

#[test]
fn calibrate_and_detect() {
    let dir = tempfile::tempdir().unwrap();
    let o = cpgvuln(&["calibrate", s(&fixture("primevul_40x40.jsonl"))], dir.path());
    assert_eq!(code(&o), 0);
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["grid_points"], 1001);
    assert!(v["accuracy"].as_f64().unwrap() >= 0.725);

    let o = cpgvuln(&["detect", s(&fixture("dma_rx.c")), "--gamma", "0.1"], dir.path());
    assert_eq!(code(&o), 0);
    let v: Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert_eq!(v["verdict"], 1);
    assert_eq!(code(&cpgvuln(&["detect", s(&fixture("dma_rx.c"))], dir.path())), 1, "γ is required");
    assert_eq!(code(&cpgvuln(&["detect", s(&fixture("dma_rx.c")), "--gamma", "2"], dir.path())), 1);
}

#[test]
fn run_then_report() {
    let dir = tempfile::tempdir().unwrap();
    let o = cpgvuln(
        &["run", s(&fixture("mini_corpus.jsonl")), "--gamma", "0.5", "--name", "r1", "--out", "runs"],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let run = dir.path().join("runs/r1");
    for f in ["report.json", "rejects.jsonl", "slices", "graphs"] {
        assert!(run.join(f).exists(), "{f}");
    }
    let o = cpgvuln(&["report", s(&run.join("report.json"))], dir.path());
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("0.9000"));

    // Same configuration, same bytes.
    cpgvuln(
        &["run", s(&fixture("mini_corpus.jsonl")), "--gamma", "0.5", "--name", "r2", "--out", "runs", "--workers", "1"],
        dir.path(),
    );
    assert_eq!(
        std::fs::read_to_string(run.join("report.json")).unwrap().replace("\"r1\"", "\"r2\""),
        std::fs::read_to_string(dir.path().join("runs/r2/report.json")).unwrap()
    );
}

#[test]
fn run_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let data = fixture("mini_corpus.jsonl");
    assert_eq!(code(&cpgvuln(&["run", s(&data), "--name", "x"], dir.path())), 1, "no threshold source");
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "workers = 0\n[threshold]\ngamma = 0.5\n").unwrap();
    assert_eq!(code(&cpgvuln(&["run", s(&data), "-c", s(&cfg)], dir.path())), 1);
    let partial = dir.path().join("partial.jsonl");
    std::fs::write(&partial, "{\"id\":\"a\",\"code\":\"int f( {\",\"label\":1}\n").unwrap();
    assert_eq!(code(&cpgvuln(&["run", s(&partial), "--gamma", "0.5", "--name", "p"], dir.path())), 2);
    let empty = dir.path().join("empty.jsonl");
    std::fs::write(&empty, "").unwrap();
    let o = cpgvuln(&["run", s(&empty), "--gamma", "0.5", "--name", "e"], dir.path());
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stderr).contains("warning: dataset is empty"));
    assert_eq!(code(&cpgvuln(&["frobnicate"], dir.path())), 1);
    assert_eq!(code(&cpgvuln(&["--help"], dir.path())), 0);
}

#[test]
fn run_with_config_file_and_transform() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "name = \"cfg\"\nworkers = 2\n[threshold]\ndataset = \"primevul\"\n").unwrap();
    let o = cpgvuln(&["run", s(&fixture("mini_corpus.jsonl")), "-c", s(&cfg), "--t4"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("runs/cfg/report.json")).unwrap()).unwrap();
    assert_eq!(v["gamma"], 0.594);
    assert_eq!(v["transform"]["id"], "T4");
}
