use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use cpgvuln::cpg::{build_cpg, load_cpg, save_cpg, CodePropertyGraph};
use cpgvuln::detector::{
    calibrate, classify, render_table, EvalReport, LocalHeuristic, LogitPair, RemoteScorer, Scorer, Thresholds,
    DEFAULT_GRID_STEP,
};
use cpgvuln::frontend::{parse, strip_comments, SourceUnit};
use cpgvuln::harness::{
    ingest, run_dataset, HttpQueryService, PipelineReport, QueryService, RunConfig, Split, TemplateQueryService,
};
use cpgvuln::metrics::{bin_by_metric, compute_metrics, summarize, MetricsReport};
use cpgvuln::query::{eval_query_with, flows_to_records, parse_query, EvalOptions, QueryValue};
use cpgvuln::slicer::slice_flows;
use cpgvuln::transforms::{apply, TransformId, TransformSpec};
use serde_json::{json, Value};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

/// Code-property-graph vulnerability pipeline.
///
/// Exit status: 0 success, 1 configuration or input error, 2 partial failures
/// (rejected lines, failed or discarded records).
#[derive(Parser)]
#[command(name = "cpgvuln", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a JSONL dataset and summarize it.
    Ingest {
        dataset: PathBuf,
        /// Write rejected lines here as JSONL.
        #[arg(long)]
        rejects: Option<PathBuf>,
    },
    /// Parse a C file and write its code property graph as JSON.
    BuildCpg {
        source: PathBuf,
        /// Output file [default: stdout].
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Evaluate a query against a C file or a saved graph.
    Query {
        /// A `.c` source file, or a `.json` graph from `build-cpg`.
        input: PathBuf,
        #[command(flatten)]
        query: QueryArgs,
    },
    /// Slice a C file along the paths of a flow query.
    Slice {
        source: PathBuf,
        #[command(flatten)]
        query: QueryArgs,
        /// Output file for the rendered slice [default: stdout].
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Apply a semantics-preserving transformation.
    Transform {
        source: PathBuf,
        #[command(flatten)]
        pick: TransformPick,
        /// Seed for renaming and dead-code placement.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output file [default: <source>.<t>.c]; the provenance sidecar is
        /// written next to it as `<output>.provenance.json`.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Compute complexity metrics for C files.
    Metrics {
        #[arg(required = true)]
        sources: Vec<PathBuf>,
        /// Histogram over this metric (loc, cc, functions, branches, nesting).
        #[arg(long, requires = "edges")]
        bin_by: Option<String>,
        /// Comma-separated, strictly increasing bin edges.
        #[arg(long, value_delimiter = ',')]
        edges: Vec<u32>,
    },
    /// Grid-search γ on scored samples (`{"lv", "lb", "label"}` per line).
    Calibrate {
        scores: PathBuf,
        #[arg(long, default_value_t = DEFAULT_GRID_STEP)]
        step: f64,
    },
    /// Score and classify C files.
    Detect {
        #[arg(required = true)]
        sources: Vec<PathBuf>,
        #[command(flatten)]
        threshold: ThresholdArgs,
        #[arg(long, value_enum, default_value_t = ScorerChoice::Local)]
        scorer: ScorerChoice,
        /// Remote request timeout in seconds.
        #[arg(long, default_value_t = 60)]
        timeout: u64,
    },
    /// Run the full pipeline over a dataset.
    Run(RunArgs),
    /// Summarize a `report.json`.
    Report { report: PathBuf },
}

#[derive(Args)]
struct QueryArgs {
    /// Query text.
    #[arg(short = 'e', long = "query", conflicts_with = "query_file", required_unless_present = "query_file")]
    text: Option<String>,
    /// File holding the query.
    #[arg(short = 'f', long)]
    query_file: Option<PathBuf>,
    /// Longest path, in nodes.
    #[arg(long, default_value_t = EvalOptions::default().max_len)]
    max_len: usize,
    /// Paths kept per query before truncation.
    #[arg(long, default_value_t = EvalOptions::default().max_paths)]
    max_paths: usize,
}

impl QueryArgs {
    fn text(&self) -> Result<String> {
        match (&self.text, &self.query_file) {
            (Some(t), _) => Ok(t.clone()),
            (None, Some(p)) => read(p),
            (None, None) => bail!("a query is required"),
        }
    }

    fn options(&self) -> EvalOptions {
        EvalOptions { max_len: self.max_len, max_paths: self.max_paths }
    }
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct TransformPick {
    /// Rename parameters.
    #[arg(long)]
    t1: bool,
    /// Insert a dead branch.
    #[arg(long)]
    t2: bool,
    /// Extract each body into a helper.
    #[arg(long)]
    t3: bool,
    /// Remove comments.
    #[arg(long)]
    t4: bool,
}

impl TransformPick {
    fn id(&self) -> Option<TransformId> {
        [(self.t1, TransformId::T1), (self.t2, TransformId::T2), (self.t3, TransformId::T3), (self.t4, TransformId::T4)]
            .into_iter()
            .find_map(|(on, id)| on.then_some(id))
    }
}

#[derive(Args, Default)]
struct ThresholdArgs {
    /// Fixed decision threshold γ.
    #[arg(long, conflicts_with = "dataset")]
    gamma: Option<f64>,
    /// Use the bundled γ for this dataset (primevul, formai, sven, reposvul).
    #[arg(long)]
    dataset: Option<String>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ScorerChoice {
    /// Offline rule-based logits.
    Local,
    /// HTTP model service at $CPGVULN_SCORER_URL.
    Remote,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum QueryServiceChoice {
    /// Offline parameter-to-sink query template.
    Template,
    /// HTTP model service at $CPGVULN_QUERYGEN_URL.
    Remote,
}

#[derive(Args)]
struct RunArgs {
    /// JSONL dataset.
    #[arg(value_name = "DATASET")]
    input: PathBuf,
    /// TOML run configuration; flags below override it.
    #[arg(short, long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    threshold: ThresholdArgs,
    /// Calibrate γ on this split and evaluate on the others.
    #[arg(long, value_parser = parse_split)]
    calibrate_on: Option<Split>,
    /// Rename parameters before analysis.
    #[arg(long)]
    t1: bool,
    /// Insert a dead branch before analysis.
    #[arg(long)]
    t2: bool,
    /// Extract each body into a helper before analysis.
    #[arg(long)]
    t3: bool,
    /// Remove comments before analysis.
    #[arg(long)]
    t4: bool,
    /// Transformation seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads [default: 4, or the config value].
    #[arg(long)]
    workers: Option<usize>,
    /// Run directory name [default: UTC timestamp].
    #[arg(long)]
    name: Option<String>,
    /// Parent directory for run output.
    #[arg(long, default_value = "runs")]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = ScorerChoice::Local)]
    scorer: ScorerChoice,
    #[arg(long, value_enum, default_value_t = QueryServiceChoice::Template)]
    query_service: QueryServiceChoice,
    /// Remote request timeout in seconds.
    #[arg(long, default_value_t = 60)]
    timeout: u64,
}

fn parse_split(s: &str) -> Result<Split, String> {
    s.parse().map_err(|e: <Split as std::str::FromStr>::Err| e.to_string())
}

fn read(p: &Path) -> Result<String> {
    std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))
}

fn write(p: &Path, text: &str) -> Result<()> {
    std::fs::write(p, text).with_context(|| format!("writing {}", p.display()))
}

fn emit(output: Option<&Path>, text: &str) -> Result<()> {
    match output {
        Some(p) => write(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn pretty(v: &impl serde::Serialize) -> String {
    serde_json::to_string_pretty(v).expect("serializable") + "\n"
}

fn load_unit(p: &Path) -> Result<SourceUnit> {
    let id = p.file_name().map_or_else(|| p.display().to_string(), |n| n.to_string_lossy().into_owned());
    Ok(SourceUnit::new(id, read(p)?).with_path(p.display().to_string()))
}

fn unit_graph(u: &SourceUnit) -> Result<CodePropertyGraph> {
    let ast = parse(u).with_context(|| format!("parsing {}", u.id))?;
    build_cpg(&ast, u).with_context(|| format!("building graph for {}", u.id))
}

fn scorer(choice: ScorerChoice, timeout: u64) -> Result<Box<dyn Scorer>> {
    Ok(match choice {
        ScorerChoice::Local => Box::new(LocalHeuristic::default()),
        ScorerChoice::Remote => Box::new(
            RemoteScorer::from_env(Duration::from_secs(timeout))
                .ok_or_else(|| anyhow!("set CPGVULN_SCORER_URL to use the remote scorer"))?,
        ),
    })
}

fn gamma(t: &ThresholdArgs) -> Result<f64> {
    match (t.gamma, &t.dataset) {
        (Some(g), _) if (0.0..=1.0).contains(&g) => Ok(g),
        (Some(g), _) => bail!("gamma {g} outside [0, 1]"),
        (None, Some(d)) => Thresholds::bundled().get(d).ok_or_else(|| anyhow!("no bundled threshold for `{d}`")),
        (None, None) => bail!("give --gamma or --dataset"),
    }
}

/// Seconds since the epoch as `YYYYMMDDTHHMMSSZ`.
fn timestamp() -> String {
    let secs = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    let (days, rem) = ((secs / 86_400) as i64, secs % 86_400);
    // Civil-from-days over the proleptic Gregorian calendar.
    let z = days + 719_468;
    let era = z.div_euclid(146_097);
    let doe = z.rem_euclid(146_097);
    let yoe = (doe - doe / 1460 + doe / 36_524 - doe / 146_096) / 365;
    let doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    let mp = (5 * doy + 2) / 153;
    let d = doy - (153 * mp + 2) / 5 + 1;
    let m = if mp < 10 { mp + 3 } else { mp - 9 };
    let y = yoe + era * 400 + i64::from(m <= 2);
    format!("{y:04}{m:02}{d:02}T{:02}{:02}{:02}Z", rem / 3600, rem % 3600 / 60, rem % 60)
}

/// Outcome of a verb: success, or finished with partial failures.
enum Status {
    Done,
    Partial,
}

fn execute(cli: Cli) -> Result<Status> {
    match cli.command {
        Command::Ingest { dataset, rejects } => {
            let ing = ingest(&dataset).with_context(|| format!("reading {}", dataset.display()))?;
            let vulnerable = ing.records.iter().filter(|r| r.label == 1).count();
            if let Some(p) = rejects {
                let lines: String =
                    ing.rejects.iter().map(|r| serde_json::to_string(r).expect("serializable") + "\n").collect();
                write(&p, &lines)?;
            }
            for r in &ing.rejects {
                eprintln!("line {}: {}", r.line, r.reason);
            }
            print!(
                "{}",
                pretty(&json!({
                    "records": ing.records.len(),
                    "vulnerable": vulnerable,
                    "safe": ing.records.len() - vulnerable,
                    "rejects": ing.rejects.len(),
                }))
            );
            Ok(if ing.rejects.is_empty() { Status::Done } else { Status::Partial })
        }
        Command::BuildCpg { source, output } => {
            let g = unit_graph(&load_unit(&source)?)?;
            let mut buf = Vec::new();
            save_cpg(&g, &mut buf).map_err(|e| anyhow!("{e}"))?;
            emit(output.as_deref(), &String::from_utf8(buf).expect("JSON is UTF-8"))?;
            Ok(Status::Done)
        }
        Command::Query { input, query } => {
            let g = if input.extension().is_some_and(|e| e == "json") {
                let f = std::fs::File::open(&input).with_context(|| format!("opening {}", input.display()))?;
                load_cpg(std::io::BufReader::new(f)).map_err(|e| anyhow!("{}: {e}", input.display()))?
            } else {
                unit_graph(&load_unit(&input)?)?
            };
            let script = parse_query(&query.text()?)?;
            for a in &script.advisories {
                eprintln!("advisory {} at {}: {}", a.kind, a.pos, a.message);
            }
            let value = eval_query_with(&script, &g, &query.options())?;
            let out = match &value {
                QueryValue::Flows(f) => json!({
                    "type": value.type_name(),
                    "truncated": f.truncated,
                    "paths": flows_to_records(f, &g),
                }),
                QueryValue::Nodes(n) => json!({
                    "type": value.type_name(),
                    "nodes": n.members.iter().map(|&id| g.node(id)).collect::<Vec<_>>(),
                }),
                QueryValue::List(xs) => json!({ "type": value.type_name(), "values": xs }),
                QueryValue::Set(xs) => json!({ "type": value.type_name(), "values": xs }),
                QueryValue::Scalar(x) => json!({ "type": value.type_name(), "value": x }),
            };
            print!("{}", pretty(&out));
            Ok(Status::Done)
        }
        Command::Slice { source, query, output } => {
            let u = load_unit(&source)?;
            let g = unit_graph(&u)?;
            let script = parse_query(&query.text()?)?;
            let value = eval_query_with(&script, &g, &query.options())?;
            let flows = value.as_flows().ok_or_else(|| anyhow!("query yields a {}, not flows", value.type_name()))?;
            if flows.is_empty() {
                eprintln!("no paths; nothing to slice");
                return Ok(Status::Partial);
            }
            let s = slice_flows(&flows.paths, &g, &u)?;
            emit(output.as_deref(), &s.rendered_text)?;
            eprintln!(
                "{} paths, {} of {} lines kept ({:.1}% reduction){}",
                s.paths.len(),
                s.slice_loc,
                s.original_loc,
                s.reduction_pct,
                if s.truncated { ", truncated" } else { "" }
            );
            Ok(Status::Done)
        }
        Command::Transform { source, pick, seed, output } => {
            let id = pick.id().expect("clap enforces one transformation");
            let u = load_unit(&source)?;
            let out = apply(TransformSpec { id, seed }, &u)?;
            let target =
                output.unwrap_or_else(|| source.with_extension(format!("{}.c", id.to_string().to_lowercase())));
            write(&target, &out.unit.text)?;
            let sidecar = PathBuf::from(format!("{}.provenance.json", target.display()));
            let provenance = json!({
                "source": source.display().to_string(),
                "output": target.display().to_string(),
                "transform": id.to_string(),
                "seed": seed,
                "line_map": out.line_map,
                "skipped": out.skipped.iter().map(|s| json!({"function": s.function, "reason": s.reason})).collect::<Vec<_>>(),
            });
            write(&sidecar, &(provenance.to_string() + "\n"))?;
            for s in &out.skipped {
                eprintln!("skipped `{}`: {}", s.function, s.reason);
            }
            Ok(Status::Done)
        }
        Command::Metrics { sources, bin_by, edges } => {
            let mut reports: Vec<MetricsReport> = Vec::new();
            for p in &sources {
                let u = load_unit(p)?;
                let r =
                    compute_metrics(&u, &unit_graph(&u)?).with_context(|| format!("metrics for {}", p.display()))?;
                println!("{}", json!({ "file": p.display().to_string(), "metrics": r }));
                reports.push(r);
            }
            let mut summary = json!({ "summary": summarize(&reports) });
            if let Some(m) = bin_by {
                summary["histogram"] = serde_json::to_value(bin_by_metric(&reports, &m, &edges)?)?;
            }
            println!("{summary}");
            Ok(Status::Done)
        }
        Command::Calibrate { scores, step } => {
            let mut samples = Vec::new();
            for (i, line) in read(&scores)?.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
                let v: Value = serde_json::from_str(line).with_context(|| format!("line {}", i + 1))?;
                let num = |k: &str| v[k].as_f64().ok_or_else(|| anyhow!("line {}: `{k}` must be a number", i + 1));
                let label = v["label"]
                    .as_u64()
                    .filter(|l| *l <= 1)
                    .ok_or_else(|| anyhow!("line {}: label must be 0 or 1", i + 1))?;
                samples.push((LogitPair::new(num("lv")?, num("lb")?)?, label == 1));
            }
            print!("{}", pretty(&calibrate(&samples, step)?));
            Ok(Status::Done)
        }
        Command::Detect { sources, threshold, scorer: choice, timeout } => {
            let g = gamma(&threshold)?;
            let scorer = scorer(choice, timeout)?;
            let mut partial = false;
            for p in &sources {
                let u = load_unit(p)?;
                match scorer.score(&strip_comments(&u).text) {
                    Ok(lp) => {
                        let v = classify(lp, g)?;
                        println!(
                            "{}",
                            json!({ "file": p.display().to_string(), "logits": lp, "p_vuln": v.p_vuln, "gamma": g, "verdict": v.label })
                        );
                    }
                    Err(e) => {
                        partial = true;
                        println!("{}", json!({ "file": p.display().to_string(), "error": e.to_string() }));
                    }
                }
            }
            Ok(if partial { Status::Partial } else { Status::Done })
        }
        Command::Run(args) => run(args),
        Command::Report { report } => {
            let r: PipelineReport =
                serde_json::from_str(&read(&report)?).with_context(|| format!("decoding {}", report.display()))?;
            let a = &r.aggregates;
            println!("run {} (γ {} from {})", r.run, r.gamma.map_or("unset".into(), |g| g.to_string()), r.gamma_source);
            println!(
                "records {}  valid queries {}  empty-result {}  discarded {}  errors {}  rejects {}",
                a.records,
                a.valid_queries,
                a.empty_result_queries,
                a.discarded,
                a.errors,
                r.rejects.len()
            );
            if let Some(m) = a.mean_reduction_pct {
                println!("mean reduction {m:.1}%");
            }
            if let Some(e) = &a.eval {
                print!("{}", render_table::<f64>(&[(r.run.as_str(), e as &EvalReport<f64>)]));
            }
            for w in &r.warnings {
                println!("warning: {w}");
            }
            Ok(Status::Done)
        }
    }
}

fn run(args: RunArgs) -> Result<Status> {
    let mut cfg = match &args.config {
        Some(p) => RunConfig::parse_toml(&read(p)?).with_context(|| format!("in {}", p.display()))?,
        None => RunConfig::default(),
    };
    let t = &mut cfg.threshold;
    if args.threshold.gamma.is_some() || args.threshold.dataset.is_some() || args.calibrate_on.is_some() {
        t.gamma = args.threshold.gamma;
        t.dataset = args.threshold.dataset.clone();
        t.calibrate_on = args.calibrate_on;
    }
    let picks = [
        (args.t1, TransformId::T1),
        (args.t2, TransformId::T2),
        (args.t3, TransformId::T3),
        (args.t4, TransformId::T4),
    ];
    match picks.iter().filter(|(on, _)| *on).count() {
        0 => {}
        1 => cfg.transform = picks.iter().find(|(on, _)| *on).map(|&(_, id)| TransformSpec { id, seed: args.seed }),
        _ => bail!("pick at most one of --t1 --t2 --t3 --t4"),
    }
    if let Some(w) = args.workers {
        cfg.workers = w;
    }
    if let Some(n) = args.name {
        cfg.name = n;
    } else if args.config.is_none() {
        cfg.name = timestamp();
    }
    let timeout = Duration::from_secs(args.timeout);
    let service: Box<dyn QueryService> = match args.query_service {
        QueryServiceChoice::Template => Box::new(TemplateQueryService),
        QueryServiceChoice::Remote => Box::new(
            HttpQueryService::from_env(timeout)
                .ok_or_else(|| anyhow!("set CPGVULN_QUERYGEN_URL to use the remote query service"))?,
        ),
    };
    let scorer = scorer(args.scorer, args.timeout)?;
    let (run, dir) = run_dataset(&args.input, &args.out, &cfg, service.as_ref(), scorer.as_ref())?;
    let a = &run.report.aggregates;
    eprintln!(
        "{}: {} records, {} errors, {} discarded, {} rejects",
        dir.display(),
        a.records,
        a.errors,
        a.discarded,
        run.report.rejects.len()
    );
    for w in &run.report.warnings {
        eprintln!("warning: {w}");
    }
    Ok(if run.report.exit_code() == 0 { Status::Done } else { Status::Partial })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match execute(cli) {
        Ok(Status::Done) => ExitCode::SUCCESS,
        Ok(Status::Partial) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
