use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use sha2::{Digest, Sha256};

use leckg::corpus::load_corpus;
use leckg::evaluation::{
    convergence_report, evaluate, read_triples, render_convergence, review_sample, review_sheet, MacroScope, MatchConfig,
    MatchMode, DEFAULT_REVIEW_SIZE, DEFAULT_SIM_THRESHOLD,
};
use leckg::extraction::{write_candidates_jsonl, Extractor};
use leckg::feedback::write_audit_log;
use leckg::kge::KgeModel;
use leckg::llm::{Gateway, HttpClient, MockClient, Scenario};
use leckg::ontology::Ontology;
use leckg::pipeline::{KnowledgeGraph, Pipeline, PipelineConfig};

const EXIT_CODES: &str = "Exit codes: 0 success, 2 usage, 3 input (missing or malformed file), \
4 LLM gateway, 5 processing (extraction, training, pipeline), 6 output write. \
Failures print one JSON line {\"error\": <category>, \"message\": ...} to stderr.";

#[derive(Parser)]
#[command(name = "leckg", version = leckg::VERSION, about = "Schema-constrained knowledge graph construction", after_help = EXIT_CODES)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Global {
    /// Ontology JSON; the bundled SDG schema when omitted.
    #[arg(long, global = true)]
    schema: Option<PathBuf>,
    /// Run config JSON; defaults for anything omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every randomized component (overrides the config).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Scripted replies instead of a live endpoint.
    #[arg(long, global = true)]
    mock_scenario: Option<PathBuf>,
    /// Chat-completion endpoint (overrides config and LECKG_LLM_URL).
    #[arg(long, global = true)]
    llm_url: Option<String>,
    /// Maximum loop iterations (overrides the config).
    #[arg(long, global = true)]
    iterations: Option<u32>,
    /// Nine re-validating rounds without early stop.
    #[arg(long, global = true)]
    analysis_mode: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Extract candidate triples from a JSON-lines corpus.
    Extract {
        #[arg(long)]
        corpus: PathBuf,
        /// Candidate triples, JSON lines.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train an embedding model on `{head, relation, tail}` JSON lines.
    TrainKge {
        #[arg(long)]
        triples: PathBuf,
        /// Binary model checkpoint.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the full extraction and validation loop.
    Run {
        #[arg(long)]
        corpus: PathBuf,
        /// Output directory: graph.jsonl, graph.tsv, rounds.json, audit.jsonl, checkpoints/, manifest.json.
        #[arg(long)]
        out: PathBuf,
        /// Gold triples; adds convergence.txt with per-round precision.
        #[arg(long)]
        gold: Option<PathBuf>,
    },
    /// Score predicted triples against gold triples.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gold: PathBuf,
        #[arg(long, value_enum, default_value_t = Mode::Exact)]
        mode: Mode,
        /// Cosine threshold for semantic matching.
        #[arg(long, default_value_t = DEFAULT_SIM_THRESHOLD)]
        threshold: f64,
        /// Average macro F1 over every schema relation instead of gold relations.
        #[arg(long)]
        macro_all: bool,
        /// Output directory: report.json and report.txt.
        #[arg(long)]
        out: PathBuf,
    },
    /// Sample graph triples into a tab-separated review sheet.
    ExportReview {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long, default_value_t = DEFAULT_REVIEW_SIZE)]
        n: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Exact,
    Semantic,
}

#[derive(Debug)]
struct Failure {
    category: &'static str,
    message: String,
}

impl Failure {
    fn code(&self) -> u8 {
        match self.category {
            "usage" => 2,
            "input" => 3,
            "gateway" => 4,
            "processing" => 5,
            _ => 6,
        }
    }
}

fn fail<E: std::fmt::Display>(category: &'static str) -> impl FnOnce(E) -> Failure {
    move |e| Failure {
        category,
        message: e.to_string(),
    }
}

fn pipeline_failure(e: leckg::pipeline::PipelineError) -> Failure {
    use leckg::extraction::ExtractionError;
    use leckg::pipeline::PipelineError as P;
    let category = match &e {
        P::Gateway(_) | P::Extraction(ExtractionError::Gateway(_)) => "gateway",
        P::Io(_) => "output",
        P::Config(_) => "input",
        _ => "processing",
    };
    Failure {
        category,
        message: e.to_string(),
    }
}

#[derive(Serialize)]
struct FileDigest {
    path: String,
    sha256: String,
}

#[derive(Serialize)]
struct Manifest {
    command: String,
    argv: Vec<String>,
    version: &'static str,
    config_path: Option<String>,
    schema_path: Option<String>,
    mock_scenario: Option<String>,
    seed: u64,
    config: PipelineConfig,
    inputs: Vec<FileDigest>,
    outputs: Vec<String>,
}

fn digest(path: &Path) -> Result<FileDigest, Failure> {
    let bytes = std::fs::read(path).map_err(|e| Failure {
        category: "input",
        message: format!("{}: {e}", path.display()),
    })?;
    Ok(FileDigest {
        path: path.display().to_string(),
        sha256: hex::encode(Sha256::digest(&bytes)),
    })
}

struct Context {
    global: Global,
    ontology: Ontology,
    config: PipelineConfig,
}

impl Context {
    fn new(global: Global) -> Result<Self, Failure> {
        let ontology = match &global.schema {
            Some(p) => Ontology::load(p).map_err(fail("input"))?,
            None => Ontology::default_sdg(),
        };
        let mut config = match &global.config {
            Some(p) => PipelineConfig::load(p).map_err(fail("input"))?,
            None => PipelineConfig::default(),
        };
        if global.analysis_mode {
            config = config.analysis_mode();
        }
        if let Some(t) = global.iterations {
            config.max_iterations = t;
        }
        if let Some(s) = global.seed {
            config = config.with_seed(s);
        }
        if let Some(url) = &global.llm_url {
            config.llm.base_url = url.clone();
        }
        config.validate().map_err(fail("input"))?;
        Ok(Self { global, ontology, config })
    }

    fn gateway(&self) -> Result<Gateway, Failure> {
        match &self.global.mock_scenario {
            Some(p) => {
                let sc = Scenario::load(p).map_err(|e| Failure {
                    category: "input",
                    message: format!("{}: {e}", p.display()),
                })?;
                Ok(Gateway::new(MockClient::new(sc)))
            }
            None => {
                let client = HttpClient::new(self.config.llm.clone().with_env()).map_err(fail("gateway"))?;
                Ok(Gateway::new(client))
            }
        }
    }

    fn manifest(&self, command: &str, inputs: &[&Path], outputs: Vec<String>) -> Result<Manifest, Failure> {
        let mut files: Vec<&Path> = inputs.to_vec();
        files.extend(self.global.config.as_deref());
        files.extend(self.global.schema.as_deref());
        files.extend(self.global.mock_scenario.as_deref());
        Ok(Manifest {
            command: command.into(),
            argv: std::env::args().collect(),
            version: leckg::VERSION,
            config_path: self.global.config.as_ref().map(|p| p.display().to_string()),
            schema_path: self.global.schema.as_ref().map(|p| p.display().to_string()),
            mock_scenario: self.global.mock_scenario.as_ref().map(|p| p.display().to_string()),
            seed: self.config.seed,
            config: self.config.clone(),
            inputs: files.into_iter().map(digest).collect::<Result<_, _>>()?,
            outputs,
        })
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), Failure> {
    let mut text = serde_json::to_string_pretty(value).map_err(fail("output"))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Failure {
        category: "output",
        message: format!("{}: {e}", path.display()),
    })
}

fn sibling_manifest(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    out.with_file_name(name)
}

fn cmd_extract(ctx: &Context, corpus: &Path, out: &Path) -> Result<(), Failure> {
    let docs = load_corpus(corpus).map_err(fail("input"))?;
    let gw = ctx.gateway()?;
    let ex = Extractor::new(&ctx.ontology, &gw, &ctx.config.extraction)
        .extract_corpus(&docs)
        .map_err(|e| match e {
            leckg::extraction::ExtractionError::Gateway(g) => fail("gateway")(g),
            other => fail("processing")(other),
        })?;
    write_candidates_jsonl(out, &ex.candidates).map_err(fail("output"))?;
    let summary = serde_json::json!({
        "documents": docs.len(),
        "candidates": ex.candidates.len(),
        "failed_chunks": ex.failed_chunks.len(),
        "flagged": ex.flagged,
        "out_of_schema": ex.oos,
        "remapped": ex.remapped,
        "schema_violations": ex.schema_violations,
    });
    println!("{summary}");
    let manifest = ctx.manifest("extract", &[corpus], vec![out.display().to_string()])?;
    write_json(&sibling_manifest(out), &manifest)
}

fn cmd_train_kge(ctx: &Context, triples: &Path, out: &Path) -> Result<(), Failure> {
    let keys = read_triples(triples).map_err(fail("input"))?;
    let rows: Vec<(&str, &str, &str)> = keys
        .iter()
        .map(|k| (k.head.as_str(), k.relation.as_str(), k.tail.as_str()))
        .collect();
    let mut m = KgeModel::for_ontology(&ctx.ontology, ctx.config.dim, &ctx.config.kge);
    let idx = m.index_triples(&rows).map_err(fail("input"))?;
    let report = m.train(&idx, &ctx.config.kge).map_err(fail("processing"))?;
    m.save(out).map_err(fail("output"))?;
    println!(
        "{}",
        serde_json::json!({
            "triples": idx.len(),
            "entities": m.entities().len(),
            "epochs": report.epochs,
            "steps": report.steps,
            "initial_loss": report.initial_loss,
            "final_loss": report.final_loss,
        })
    );
    let manifest = ctx.manifest("train-kge", &[triples], vec![out.display().to_string()])?;
    write_json(&sibling_manifest(out), &manifest)
}

fn cmd_run(ctx: &Context, corpus: &Path, out: &Path, gold: Option<&Path>) -> Result<(), Failure> {
    let docs = load_corpus(corpus).map_err(fail("input"))?;
    let gold_triples = gold.map(read_triples).transpose().map_err(fail("input"))?;
    let gw = ctx.gateway()?;
    let encoder = ctx.config.encoder.build().map_err(fail("input"))?;
    std::fs::create_dir_all(out).map_err(fail("output"))?;
    let rs = Pipeline::new(&docs, &ctx.ontology, &gw, encoder.as_ref(), ctx.config.clone())
        .map_err(pipeline_failure)?
        .with_checkpoints(out.join("checkpoints"))
        .run()
        .map_err(pipeline_failure)?;

    let graph = KnowledgeGraph::from_state(&rs.state);
    let (jsonl, tsv) = graph.write(out).map_err(fail("output"))?;
    let rounds = out.join("rounds.json");
    write_json(&rounds, &rs.state.rounds)?;
    let audit = out.join("audit.jsonl");
    write_audit_log(&audit, &rs.state.audit).map_err(fail("output"))?;
    let mut outputs = vec![jsonl, tsv, rounds, audit, out.join("checkpoints")];
    if let Some(g) = &gold_triples {
        let rows = convergence_report(&rs.state, g, &MatchConfig::exact(), None).map_err(fail("processing"))?;
        let path = out.join("convergence.txt");
        std::fs::write(&path, render_convergence(&rows)).map_err(fail("output"))?;
        outputs.push(path);
    }
    println!(
        "{}",
        serde_json::json!({
            "rounds": rs.state.t,
            "converged": rs.state.converged,
            "validated": graph.triples.len(),
            "entities": graph.entities.len(),
            "feedback_calls": rs.state.rounds.iter().map(|r| r.feedback_calls).sum::<usize>(),
        })
    );
    let mut inputs = vec![corpus];
    inputs.extend(gold);
    let manifest = ctx.manifest("run", &inputs, outputs.iter().map(|p| p.display().to_string()).collect())?;
    write_json(&out.join("manifest.json"), &manifest)
}

fn cmd_eval(ctx: &Context, pred: &Path, gold: &Path, mode: Mode, threshold: f64, macro_all: bool, out: &Path) -> Result<(), Failure> {
    let p = read_triples(pred).map_err(fail("input"))?;
    let g = read_triples(gold).map_err(fail("input"))?;
    let cfg = MatchConfig {
        mode: match mode {
            Mode::Exact => MatchMode::Exact,
            Mode::Semantic => MatchMode::Semantic,
        },
        sim_threshold: threshold,
        macro_scope: if macro_all { MacroScope::Schema } else { MacroScope::Gold },
    };
    let encoder = match mode {
        Mode::Semantic => Some(ctx.config.encoder.build().map_err(fail("input"))?),
        Mode::Exact => None,
    };
    let schema: Vec<String> = ctx.ontology.relations().iter().map(|r| r.id.clone()).collect();
    let report = evaluate(&p, &g, &cfg, encoder.as_deref(), &schema).map_err(fail("processing"))?;
    std::fs::create_dir_all(out).map_err(fail("output"))?;
    write_json(&out.join("report.json"), &report)?;
    std::fs::write(out.join("report.txt"), report.to_table()).map_err(fail("output"))?;
    print!("{}", report.to_table());
    let outputs = vec![out.join("report.json").display().to_string(), out.join("report.txt").display().to_string()];
    let manifest = ctx.manifest("eval", &[pred, gold], outputs)?;
    write_json(&out.join("manifest.json"), &manifest)
}

fn cmd_export_review(ctx: &Context, graph: &Path, n: usize, out: &Path) -> Result<(), Failure> {
    let text = std::fs::read_to_string(graph).map_err(|e| Failure {
        category: "input",
        message: format!("{}: {e}", graph.display()),
    })?;
    let g = KnowledgeGraph::from_jsonl(&text).map_err(fail("input"))?;
    let rows = review_sample(&g, n, ctx.config.seed);
    std::fs::write(out, review_sheet(&rows)).map_err(fail("output"))?;
    println!("{}", serde_json::json!({ "sampled": rows.len(), "graph_triples": g.triples.len() }));
    let manifest = ctx.manifest("export-review", &[graph], vec![out.display().to_string()])?;
    write_json(&sibling_manifest(out), &manifest)
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    let ctx = Context::new(cli.global)?;
    match cli.command {
        Command::Extract { corpus, out } => cmd_extract(&ctx, &corpus, &out),
        Command::TrainKge { triples, out } => cmd_train_kge(&ctx, &triples, &out),
        Command::Run { corpus, out, gold } => cmd_run(&ctx, &corpus, &out, gold.as_deref()),
        Command::Eval {
            pred,
            gold,
            mode,
            threshold,
            macro_all,
            out,
        } => cmd_eval(&ctx, &pred, &gold, mode, threshold, macro_all, &out),
        Command::ExportReview { graph, n, out } => cmd_export_review(&ctx, &graph, n, &out),
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()))
        .with_writer(std::io::stderr)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{}", serde_json::json!({ "error": f.category, "message": f.message }));
            ExitCode::from(f.code())
        }
    }
}
