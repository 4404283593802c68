//! `dorag`: operator command line for the pipeline.
//!
//! Exit codes: 0 success, 2 usage or invalid input, 3 I/O, 4 provider
//! failure, 5 unanswerable (both stores empty).

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use dorag_core::config::LlmProvider;
use dorag_core::generation::ABSTENTION;
use dorag_core::ingest::Format;
use dorag_core::pipeline::{ChatRequest, ChatResponse, RetrievalOverrides};
use dorag_core::{Config, Engine, EngineError};

#[derive(Parser, Debug)]
#[command(name = "dorag", version, about = "Knowledge-graph enhanced question answering over technical documents")]
struct Cli {
    /// Directory holding all stores.
    #[arg(long, global = true, default_value = "dorag-data")]
    data_dir: PathBuf,
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Machine-readable output.
    #[arg(long, global = true)]
    json: bool,
    /// Scripted transcript for the mock provider.
    #[arg(long, global = true)]
    transcript: Option<PathBuf>,
    #[command(flatten)]
    retrieval: RetrievalFlags,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Copy)]
struct RetrievalFlags {
    #[arg(long, global = true)]
    alpha: Option<f64>,
    #[arg(long, global = true)]
    k_chunks: Option<usize>,
    #[arg(long, global = true)]
    k_seed: Option<usize>,
    #[arg(long, global = true)]
    max_hops: Option<usize>,
    #[arg(long, global = true)]
    min_edge_weight: Option<f64>,
}

impl RetrievalFlags {
    fn overrides(self) -> RetrievalOverrides {
        RetrievalOverrides {
            alpha: self.alpha,
            k_chunks: self.k_chunks,
            k_seed: self.k_seed,
            max_hops: self.max_hops,
            min_edge_weight: self.min_edge_weight,
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Chunk and index documents; extraction is queued.
    Ingest {
        #[arg(required = true)]
        paths: Vec<PathBuf>,
        /// Override the format guessed from the file extension.
        #[arg(long)]
        format: Option<Format>,
    },
    /// Drain the extraction queue into the knowledge graph.
    BuildKg,
    /// Answer one question.
    Query {
        text: String,
        /// Continue an existing chat session.
        #[arg(long)]
        session: Option<String>,
    },
    /// Run the HTTP service.
    Serve {
        /// Address to bind; defaults to the configured one.
        #[arg(long)]
        bind: Option<String>,
    },
    /// Evaluate a line-delimited JSON dataset and print the metric table.
    Eval { dataset: PathBuf },
    /// Write the knowledge graph as line-delimited JSON.
    ExportGraph { path: PathBuf },
}

enum Failure {
    Usage(String),
    Io(String),
    Provider(String),
    Unanswerable(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Io(_) => 3,
            Failure::Provider(_) => 4,
            Failure::Unanswerable(_) => 5,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Io(m) | Failure::Provider(m) | Failure::Unanswerable(m) => m,
        }
    }
}

impl From<EngineError> for Failure {
    fn from(e: EngineError) -> Self {
        let m = e.to_string();
        match e {
            EngineError::Config(_) | EngineError::EmptyQuery | EngineError::InvalidRequest(_) => Failure::Usage(m),
            EngineError::Provider(_) => Failure::Provider(m),
            EngineError::Unanswerable => Failure::Unanswerable(m),
            EngineError::Io(_)
            | EngineError::Ingest(_)
            | EngineError::Duplicate { .. }
            | EngineError::UnknownSession(_)
            | EngineError::UnknownDocument(_)
            | EngineError::Dataset(_)
            | EngineError::Kg(_) => Failure::Io(m),
        }
    }
}

fn print_json(v: &impl serde::Serialize) {
    println!("{}", serde_json::to_string_pretty(v).expect("output serializes"));
}

fn load_config(cli: &Cli) -> Result<Config, Failure> {
    let mut config = Config::resolve(cli.config.as_deref()).map_err(|e| Failure::Usage(e.to_string()))?;
    if let Some(t) = &cli.transcript {
        config.llm.provider = LlmProvider::Mock;
        config.llm.transcript = Some(t.clone());
    }
    config.retrieval = cli.retrieval.overrides().apply(&config.retrieval);
    Ok(config)
}

/// Files to ingest: each path, or the files directly inside a directory, sorted.
fn expand(paths: &[PathBuf]) -> Result<Vec<PathBuf>, Failure> {
    let mut out = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut files: Vec<PathBuf> = std::fs::read_dir(p)
                .map_err(|e| Failure::Io(format!("{}: {e}", p.display())))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.is_file())
                .collect();
            files.sort();
            out.extend(files);
        } else {
            out.push(p.clone());
        }
    }
    Ok(out)
}

fn format_of(path: &Path) -> Format {
    path.extension().and_then(|e| e.to_str()).map(Format::from_extension).unwrap_or_default()
}

fn ingest(engine: &Engine, paths: &[PathBuf], format: Option<Format>, json: bool) -> Result<(), Failure> {
    let mut receipts = Vec::new();
    for path in expand(paths)? {
        let raw = std::fs::read(&path).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?;
        let origin = path.display().to_string();
        match engine.ingest(&raw, format.unwrap_or_else(|| format_of(&path)), &origin) {
            Ok(r) => {
                if !json {
                    println!("{}  {} chunks  {}", r.doc_id, r.chunk_count, origin);
                }
                receipts.push(serde_json::json!({"path": origin, "receipt": r}));
            }
            Err(EngineError::Duplicate { doc_id }) => {
                if !json {
                    println!("{doc_id}  already ingested  {origin}");
                }
                receipts.push(serde_json::json!({"path": origin, "duplicate_of": doc_id}));
            }
            Err(e) => return Err(Failure::from(e)),
        }
    }
    if json {
        print_json(&receipts);
    }
    Ok(())
}

fn build_kg(engine: &Engine, json: bool) -> Result<(), Failure> {
    let summary = engine.build_kg()?;
    let stats = engine.graph_stats();
    if json {
        print_json(&serde_json::json!({"summary": summary, "stats": stats}));
    } else {
        let m = &summary.report.merge;
        println!(
            "documents {}  chunks {}  new nodes {}  merged {}  new edges {}  synopsis {}",
            summary.documents.len(),
            summary.report.chunks_processed,
            m.new_nodes,
            m.merged_nodes,
            m.new_edges,
            summary.report.synopsis_nodes
        );
        println!("graph: {} nodes, {} edges, {} synopsis", stats.nodes, stats.edges, stats.synopsis_count);
        for f in &summary.report.failures {
            eprintln!("failed {}: {}", f.chunk_id, f.error);
        }
    }
    match summary.report.failures.first() {
        Some(f) => Err(Failure::Provider(format!(
            "{} chunk(s) failed extraction, first: {}",
            summary.report.failures.len(),
            f.error
        ))),
        None => Ok(()),
    }
}

fn render_answer(engine: &Engine, resp: &ChatResponse) -> String {
    let env = &resp.envelope;
    let mut out = format!("{}\n", env.condensed);
    if !env.citations.is_empty() {
        out.push_str("\nCitations:\n");
        for c in &env.citations {
            let title = engine.document(&c.doc_id).map(|d| d.title).unwrap_or_else(|| c.doc_id.clone());
            let mut line = format!("  [{}] {title}", c.marker);
            // The top heading usually repeats the title.
            let path = match c.section_path.split_first() {
                Some((first, rest)) if *first == title => rest,
                _ => &c.section_path[..],
            };
            if !path.is_empty() {
                line.push_str(&format!(" > {}", path.join(" > ")));
            }
            if let Some(p) = c.page {
                line.push_str(&format!(", p. {p}"));
            }
            out.push_str(&format!("{line}  ({})\n", c.chunk_id));
        }
    }
    if !env.followups.is_empty() {
        out.push_str("\nFollow-up questions:\n");
        for q in &env.followups {
            out.push_str(&format!("  - {q}\n"));
        }
    }
    out.push_str(&format!("\nsession {}  trace {}\n", resp.session_id, env.trace_id));
    out
}

fn query(engine: &Engine, text: &str, session: Option<String>, json: bool) -> Result<(), Failure> {
    // Flags were already folded into the engine's retrieval config.
    let req = ChatRequest { session_id: session, query: text.to_string(), config: RetrievalOverrides::default() };
    match engine.chat(&req) {
        Ok(resp) if json => print_json(&resp),
        Ok(resp) => print!("{}", render_answer(engine, &resp)),
        Err(EngineError::Unanswerable) => {
            println!("{ABSTENTION}");
            return Err(Failure::Unanswerable("no documents have been ingested".into()));
        }
        Err(e) => return Err(e.into()),
    }
    Ok(())
}

fn eval(engine: &Engine, dataset: &Path, json: bool) -> Result<(), Failure> {
    let text = std::fs::read_to_string(dataset).map_err(|e| Failure::Io(format!("{}: {e}", dataset.display())))?;
    let report = engine.eval(&text)?;
    if json {
        print_json(&report);
    } else {
        print!("{}", report.to_table());
    }
    if !report.records.is_empty() && report.aggregate.is_none() {
        return Err(Failure::Provider("every record failed".into()));
    }
    Ok(())
}

fn serve(engine: Engine, bind: Option<String>) -> Result<(), Failure> {
    tracing_subscriber::fmt()
        .json()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .with_writer(std::io::stdout)
        .init();
    let addr = bind.unwrap_or_else(|| engine.config().service.bind.clone());
    let rt = tokio::runtime::Runtime::new().map_err(|e| Failure::Io(e.to_string()))?;
    rt.block_on(dorag_service::serve(Arc::new(engine), &addr)).map_err(|e| Failure::Io(format!("{addr}: {e}")))
}

fn run(cli: Cli) -> Result<(), Failure> {
    let config = load_config(&cli)?;
    let engine = Engine::open(&cli.data_dir, config)?;
    match cli.command {
        Command::Ingest { paths, format } => ingest(&engine, &paths, format, cli.json),
        Command::BuildKg => build_kg(&engine, cli.json),
        Command::Query { text, session } => query(&engine, &text, session, cli.json),
        Command::Serve { bind } => serve(engine, bind),
        Command::Eval { dataset } => eval(&engine, &dataset, cli.json),
        Command::ExportGraph { path } => {
            engine.export_graph(&path)?;
            if !cli.json {
                let s = engine.graph_stats();
                println!("wrote {} nodes and {} edges to {}", s.nodes, s.edges, path.display());
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if !matches!(cli.command, Command::Serve { .. }) {
        // Warnings only, and never on stdout, so command output stays parseable.
        tracing_subscriber::fmt()
            .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()))
            .with_writer(std::io::stderr)
            .init();
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
