//! `aqrag`: build answerable-question indexes, ask questions against them,
//! and run evaluations and ablation grids.
//!
//! Exit codes: 0 success, 1 operational failure, 2 usage error.

mod backends;
mod settings;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use aqrag::corpus::{self, DEFAULT_STRIDE, DEFAULT_WINDOW};
use aqrag::evalkit::{self, IndexCache, ReportSummary};
use aqrag::index::{self, BuildOptions, EntryKind, IndexStats};
use aqrag::pipeline::{self, ContextOrder, InferenceMode, PipelineConfig, DEFAULT_K1, DEFAULT_K2};
use aqrag::stats::{render_table, CountStats};
use aqrag::transform::DEFAULT_MAX_SUBQUESTIONS;
use aqrag::IndexMode;
use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use backends::BackendArgs;
use settings::Settings;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Failure(String),
}

impl CliError {
    fn failure(stage: &str, e: impl std::fmt::Display) -> Self {
        CliError::Failure(format!("{stage}: {e}"))
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "aqrag",
    version,
    about = "Answerable-question RAG: indexing, retrieval and evaluation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Chunk a corpus, generate surrogate texts, embed and save an index.
    Index(IndexArgs),
    /// Answer one question against a saved index.
    Ask(AskArgs),
    /// Evaluate a dataset and write a report.
    Eval(EvalArgs),
    /// Run a grid of evaluations and print a comparison table.
    Ablate(AblateArgs),
    /// Entry-per-chunk statistics of an index, or decomposition statistics of a dataset.
    Stats(StatsArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OutputFormat {
    /// Human-readable text.
    Text,
    /// One JSON object per line.
    Record,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OrderArg {
    Rerank,
    Document,
}

impl From<OrderArg> for ContextOrder {
    fn from(o: OrderArg) -> Self {
        match o {
            OrderArg::Rerank => ContextOrder::Rerank,
            OrderArg::Document => ContextOrder::Document,
        }
    }
}

#[derive(Debug, Args)]
struct IndexArgs {
    /// Corpus file: one {"id", "title"?, "text"} JSON object per line.
    #[arg(long)]
    corpus: PathBuf,
    /// Output directory for the index.
    #[arg(long)]
    out: PathBuf,
    /// Surrogate texts to embed: document|aq|both|summary|paraphrase.
    #[arg(long, default_value = "aq")]
    mode: IndexMode,
    /// Chunk window in characters.
    #[arg(long, default_value_t = DEFAULT_WINDOW)]
    window: usize,
    /// Chunk stride in characters (0 < stride <= window).
    #[arg(long, default_value_t = DEFAULT_STRIDE)]
    stride: usize,
    /// Output format.
    #[arg(long, value_enum, default_value_t = OutputFormat::Text)]
    format: OutputFormat,
    #[command(flatten)]
    backend: BackendArgs,
}

#[derive(Debug, Args)]
struct RetrievalArgs {
    /// Entries retrieved per subquestion.
    #[arg(long, default_value_t = DEFAULT_K1)]
    k1: usize,
    /// Chunks kept after reranking.
    #[arg(long, default_value_t = DEFAULT_K2)]
    k2: usize,
    /// Inference mode: unified|sequential.
    #[arg(long, visible_alias = "mode", default_value = "unified")]
    inference: InferenceMode,
    /// Retrieve with the question itself instead of its subquestions.
    #[arg(long)]
    no_decompose: bool,
    /// Upper bound on subquestions; more is an error.
    #[arg(long, default_value_t = DEFAULT_MAX_SUBQUESTIONS)]
    max_subquestions: usize,
    /// Order of chunks in the generation context.
    #[arg(long, value_enum, default_value_t = OrderArg::Rerank)]
    context_order: OrderArg,
}

#[derive(Debug, Args)]
struct AskArgs {
    /// Index directory written by `aqrag index`.
    #[arg(long)]
    index: PathBuf,
    /// Question to answer.
    #[arg(long)]
    question: String,
    #[command(flatten)]
    retrieval: RetrievalArgs,
    /// Also print the full trace record.
    #[arg(long)]
    trace: bool,
    /// Output format.
    #[arg(long, value_enum, default_value_t = OutputFormat::Text)]
    format: OutputFormat,
    #[command(flatten)]
    backend: BackendArgs,
}

/// Experiment settings given as flags; each overrides the config file.
#[derive(Debug, Args)]
struct ExperimentFlags {
    /// Dataset: one {"input", "context", "answers"} JSON object per line.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Index mode: document|aq|both|summary|paraphrase [default: aq].
    #[arg(long)]
    mode: Option<IndexMode>,
    /// Entries retrieved per subquestion [default: 100].
    #[arg(long)]
    k1: Option<usize>,
    /// Chunks kept after reranking [default: 7].
    #[arg(long)]
    k2: Option<usize>,
    /// unified|sequential [default: unified].
    #[arg(long)]
    inference: Option<InferenceMode>,
    /// Disable question decomposition.
    #[arg(long)]
    no_decompose: bool,
    /// Chunk window in characters [default: 800].
    #[arg(long)]
    window: Option<usize>,
    /// Chunk stride in characters [default: 600].
    #[arg(long)]
    stride: Option<usize>,
    /// Evaluate only the first N records.
    #[arg(long)]
    limit: Option<usize>,
    /// Abort on the first failing record instead of scoring it 0.
    #[arg(long)]
    strict: bool,
}

impl ExperimentFlags {
    fn settings(&self) -> Settings {
        Settings {
            dataset: self.dataset.clone(),
            mode: self.mode,
            k1: self.k1,
            k2: self.k2,
            inference: self.inference,
            decompose: self.no_decompose.then_some(false),
            window: self.window,
            stride: self.stride,
            limit: self.limit,
            strict: self.strict.then_some(true),
            ..Settings::default()
        }
    }
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// TOML file with experiment settings (mode, k1, k2, inference, decompose, window, stride, limit, ...).
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    experiment: ExperimentFlags,
    /// Write the report (JSON lines) here.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Persist per-record indexes here and reuse them across runs.
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    /// Output format.
    #[arg(long, value_enum, default_value_t = OutputFormat::Text)]
    format: OutputFormat,
    #[command(flatten)]
    backend: BackendArgs,
}

#[derive(Debug, Args)]
struct AblateArgs {
    /// TOML grid: base settings plus a [vary] table of value lists.
    #[arg(long)]
    grid: PathBuf,
    #[command(flatten)]
    experiment: ExperimentFlags,
    /// Directory for one report per run (run-01.jsonl, ...) and table.txt.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Persist per-record indexes here and reuse them across runs.
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    /// Output format.
    #[arg(long, value_enum, default_value_t = OutputFormat::Text)]
    format: OutputFormat,
    #[command(flatten)]
    backend: BackendArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum KindArg {
    All,
    Document,
    Aq,
    Summary,
    Paraphrase,
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("source").required(true).args(["index", "dataset"])))]
struct StatsArgs {
    /// Index directory: report entries per chunk.
    #[arg(long)]
    index: Option<PathBuf>,
    /// Dataset file: decompose every question and report subquestion counts.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Entry kind counted for --index.
    #[arg(long, value_enum, default_value_t = KindArg::All)]
    kind: KindArg,
    /// Upper bound on subquestions; more is an error.
    #[arg(long, default_value_t = DEFAULT_MAX_SUBQUESTIONS)]
    max_subquestions: usize,
    /// Evaluate only the first N dataset records.
    #[arg(long)]
    limit: Option<usize>,
    /// Row label in the table [default: index mode or dataset file stem].
    #[arg(long)]
    label: Option<String>,
    /// Output format.
    #[arg(long, value_enum, default_value_t = OutputFormat::Text)]
    format: OutputFormat,
    #[command(flatten)]
    backend: BackendArgs,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Index(a) => cmd_index(a),
        Command::Ask(a) => cmd_ask(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Ablate(a) => cmd_ablate(a),
        Command::Stats(a) => cmd_stats(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(CliError::Failure(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}

fn stats_json(s: &CountStats) -> serde_json::Value {
    json!({"n": s.n, "mean": s.mean, "std": s.std, "min": s.min, "max": s.max})
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents)
        .map_err(|e| CliError::failure("write", format!("{}: {e}", path.display())))
}

fn cmd_index(args: IndexArgs) -> Result<(), CliError> {
    let chunking = settings::chunking(Some(args.window), Some(args.stride))?;
    let backends = args.backend.build()?;
    let docs = corpus::load_corpus(&args.corpus).map_err(|e| CliError::failure("corpus", e))?;
    let idx = index::build_index(
        &docs,
        args.mode,
        &chunking,
        backends.indexer.as_ref(),
        backends.embedder.as_ref(),
        BuildOptions {
            parallelism: args.backend.parallelism,
        },
    )
    .map_err(|e| CliError::failure("index", e))?;
    index::save_index(&idx, &args.out).map_err(|e| CliError::failure("save", e))?;
    let stats = index::index_stats(&idx);
    match args.format {
        OutputFormat::Record => println!(
            "{}",
            json!({
                "index": args.out,
                "mode": args.mode,
                "entries": stats.entries,
                "chunks": stats.chunks,
                "zero_entry_chunks": stats.zero_entry_chunks,
                "per_chunk": stats_json(&stats.per_chunk),
            })
        ),
        OutputFormat::Text => {
            println!("index: {}", args.out.display());
            print_index_stats(args.mode.as_str(), &stats);
        }
    }
    Ok(())
}

fn print_index_stats(label: &str, stats: &IndexStats) {
    println!("entries: {}", stats.entries);
    println!("chunks: {}", stats.chunks);
    println!("chunks without entries: {}", stats.zero_entry_chunks);
    print!(
        "{}",
        render_table("Entries per chunk", &[(label.to_string(), stats.per_chunk)])
    );
}

fn cmd_ask(args: AskArgs) -> Result<(), CliError> {
    let r = &args.retrieval;
    let cfg = PipelineConfig {
        k1: r.k1,
        k2: r.k2,
        inference: r.inference,
        decompose: !r.no_decompose,
        max_subquestions: r.max_subquestions,
        context_order: r.context_order.into(),
    };
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    if args.question.trim().is_empty() {
        return Err(CliError::Usage("--question is empty".into()));
    }
    let backends = args.backend.build()?;
    let idx = index::load_index(&args.index).map_err(|e| CliError::failure("load", e))?;
    let built_with = &idx.manifest().embedder_model;
    if built_with != backends.embedder.model_name() {
        eprintln!(
            "warning: index was embedded with {built_with}, querying with {}",
            backends.embedder.model_name()
        );
    }
    let answer = pipeline::run_query(&args.question, &idx, &backends, &cfg)
        .map_err(|e| CliError::Failure(e.to_string()))?;
    match args.format {
        OutputFormat::Record => println!("{}", answer.trace.to_record()),
        OutputFormat::Text => {
            println!("answer: {}", answer.text);
            println!("subquestions:");
            for sq in &answer.subquestions {
                println!("  {}. {}", sq.index, sq.text);
            }
            if answer.trace.decomposition_fallback {
                println!("  (decomposition was empty; used the question itself)");
            }
            println!("ranked chunks:");
            for (i, id) in answer.trace.ranked_ids.iter().enumerate() {
                println!("  {}. {id}", i + 1);
            }
            if args.trace {
                println!("{}", answer.trace.to_record());
            }
        }
    }
    Ok(())
}

fn cache(dir: Option<&PathBuf>) -> IndexCache {
    dir.map_or_else(IndexCache::new, IndexCache::with_dir)
}

fn summary_text(s: &ReportSummary) -> String {
    let mut out = format!(
        "records: {}\nerrors: {}\nfingerprint: {}\nF1: {:.4}\n",
        s.records, s.errors, s.fingerprint, s.aggregate_f1
    );
    if let Some(d) = &s.decomposition {
        out.push_str(&render_table(
            "Subquestions per question",
            &[(s.index_mode.to_string(), *d)],
        ));
    }
    out
}

fn cmd_eval(args: EvalArgs) -> Result<(), CliError> {
    let file = match &args.config {
        Some(p) => settings::load_settings(p)?,
        None => Settings::default(),
    };
    let cfg = file
        .overlay(&args.experiment.settings())
        .to_config(args.backend.parallelism)?;
    let backends = args.backend.build()?;
    if !cfg.dataset.is_file() {
        return Err(CliError::failure(
            "dataset",
            format!("{} not found", cfg.dataset.display()),
        ));
    }
    let report = evalkit::run_experiment(&cfg, &backends, &cache(args.cache_dir.as_ref()))
        .map_err(|e| CliError::failure("eval", e))?;
    if let Some(out) = &args.out {
        write_file(out, &report.to_jsonl())?;
    }
    for r in report.records.iter().filter(|r| r.error.is_some()) {
        eprintln!(
            "record {}: {}",
            r.record_id,
            r.error.as_deref().unwrap_or_default()
        );
    }
    match args.format {
        OutputFormat::Record => print!("{}", report.to_jsonl()),
        OutputFormat::Text => print!("{}", summary_text(&report.summary)),
    }
    Ok(())
}

fn cmd_ablate(args: AblateArgs) -> Result<(), CliError> {
    let (base, vary) = settings::load_grid(&args.grid)?;
    let base = base.overlay(&args.experiment.settings());
    let grid = settings::expand(&base, &vary)
        .iter()
        .map(|s| s.to_config(args.backend.parallelism))
        .collect::<Result<Vec<_>, _>>()?;
    let backends = args.backend.build()?;
    for cfg in &grid {
        if !cfg.dataset.is_file() {
            return Err(CliError::failure(
                "dataset",
                format!("{} not found", cfg.dataset.display()),
            ));
        }
    }
    let out = evalkit::run_ablation_grid(&grid, &backends, &cache(args.cache_dir.as_ref()))
        .map_err(|e| CliError::failure("ablate", e))?;
    if let Some(dir) = &args.out {
        fs::create_dir_all(dir)
            .map_err(|e| CliError::failure("write", format!("{}: {e}", dir.display())))?;
        for (i, report) in out.reports.iter().enumerate() {
            write_file(
                &dir.join(format!("run-{:02}.jsonl", i + 1)),
                &report.to_jsonl(),
            )?;
        }
        write_file(&dir.join("table.txt"), &out.table)?;
    }
    match args.format {
        OutputFormat::Record => {
            for r in &out.reports {
                println!(
                    "{}",
                    serde_json::to_string(&r.summary).expect("summary serializes")
                );
            }
        }
        OutputFormat::Text => print!("{}", out.table),
    }
    Ok(())
}

fn cmd_stats(args: StatsArgs) -> Result<(), CliError> {
    if let Some(dir) = &args.index {
        let idx = index::load_index(dir).map_err(|e| CliError::failure("load", e))?;
        let kind = match args.kind {
            KindArg::All => None,
            KindArg::Document => Some(EntryKind::Document),
            KindArg::Aq => Some(EntryKind::Aq),
            KindArg::Summary => Some(EntryKind::Summary),
            KindArg::Paraphrase => Some(EntryKind::Paraphrase),
        };
        let stats = match kind {
            None => index::index_stats(&idx),
            Some(k) => index::index_stats_for(&idx, k),
        };
        let label = args.label.unwrap_or_else(|| idx.mode().to_string());
        match args.format {
            OutputFormat::Record => println!(
                "{}",
                json!({
                    "label": label,
                    "entries": stats.entries,
                    "chunks": stats.chunks,
                    "zero_entry_chunks": stats.zero_entry_chunks,
                    "per_chunk": stats_json(&stats.per_chunk),
                })
            ),
            OutputFormat::Text => print_index_stats(&label, &stats),
        }
        return Ok(());
    }

    let path = args
        .dataset
        .as_ref()
        .expect("clap enforces --index or --dataset");
    if args.max_subquestions == 0 {
        return Err(CliError::Usage("--max-subquestions must be >= 1".into()));
    }
    let backends = args.backend.build()?;
    let mut records = evalkit::load_dataset(path).map_err(|e| CliError::failure("dataset", e))?;
    if let Some(limit) = args.limit {
        records.truncate(limit);
    }
    let questions: Vec<&str> = records.iter().map(|r| r.question.as_str()).collect();
    let stats = evalkit::decomposition_stats(
        &questions,
        backends.decomposer.as_ref(),
        args.max_subquestions,
    );
    let label = args.label.unwrap_or_else(|| {
        path.file_stem().map_or_else(
            || path.display().to_string(),
            |s| s.to_string_lossy().into_owned(),
        )
    });
    match args.format {
        OutputFormat::Record => println!(
            "{}",
            json!({
                "label": label,
                "questions": questions.len(),
                "fallbacks": stats.fallbacks,
                "errors": stats.errors,
                "subquestions": stats_json(&stats.counts),
            })
        ),
        OutputFormat::Text => {
            println!("questions: {}", questions.len());
            println!("empty decompositions: {}", stats.fallbacks);
            println!("failed decompositions: {}", stats.errors);
            print!(
                "{}",
                render_table("Subquestions per question", &[(label, stats.counts)])
            );
        }
    }
    Ok(())
}
