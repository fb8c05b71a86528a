//! Experiment execution, reports and ablation grids.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::BufRead;
use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::cache::{cache_key, IndexCache};
use super::dataset::{load_dataset, EvalRecord};
use super::EvalError;
use crate::corpus::ChunkingConfig;
use crate::gateway::ChatBackend;
use crate::index::{build_index, BuildOptions, IndexMode};
use crate::pipeline::{run_query, Backends, PipelineConfig};
use crate::prompts;
use crate::stats::CountStats;
use crate::transform;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// Label used in comparison tables; not part of the fingerprint.
    pub name: String,
    pub index_mode: IndexMode,
    pub pipeline: PipelineConfig,
    pub chunking: ChunkingConfig,
    pub dataset: PathBuf,
    pub limit: Option<usize>,
    /// Abort on the first failing record instead of scoring it 0.
    pub strict: bool,
    /// Records evaluated concurrently.
    pub parallelism: usize,
}

impl ExperimentConfig {
    pub fn new(dataset: impl Into<PathBuf>) -> Self {
        Self {
            name: String::new(),
            index_mode: IndexMode::Aq,
            pipeline: PipelineConfig::default(),
            chunking: ChunkingConfig::default(),
            dataset: dataset.into(),
            limit: None,
            strict: false,
            parallelism: 1,
        }
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        self.pipeline
            .validate()
            .map_err(|e| EvalError::Config(e.to_string()))?;
        if self.parallelism == 0 {
            return Err(EvalError::Config("parallelism must be >= 1".into()));
        }
        if !self.dataset.is_file() {
            return Err(EvalError::Config(format!(
                "dataset {} does not exist",
                self.dataset.display()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendNames {
    pub indexer: String,
    pub decomposer: String,
    pub generator: String,
    pub embedder: String,
    pub reranker: String,
}

impl BackendNames {
    pub fn of(b: &Backends) -> Self {
        Self {
            indexer: b.indexer.model_name().to_string(),
            decomposer: b.decomposer.model_name().to_string(),
            generator: b.generator.model_name().to_string(),
            embedder: b.embedder.model_name().to_string(),
            reranker: b.reranker.model_name().to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordResult {
    pub record_id: String,
    pub question: String,
    pub gold_answers: Vec<String>,
    pub prediction: Option<String>,
    pub f1: f64,
    pub error: Option<String>,
    pub subquestions: Vec<String>,
    pub decomposition_fallback: bool,
    pub ranked_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub name: String,
    pub fingerprint: String,
    pub index_mode: IndexMode,
    pub pipeline: PipelineConfig,
    pub chunking: ChunkingConfig,
    pub backends: BackendNames,
    pub dataset_hash: String,
    pub limit: Option<usize>,
    pub records: usize,
    pub errors: usize,
    pub aggregate_f1: f64,
    /// Subquestions per record over records that were decomposed.
    pub decomposition: Option<CountStats>,
}

/// Results are deterministic given the inputs: no timings or timestamps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub summary: ReportSummary,
    pub records: Vec<RecordResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ReportLine {
    Record(RecordResult),
    Summary(ReportSummary),
}

impl Report {
    /// One JSON line per record followed by the summary line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        let lines = self
            .records
            .iter()
            .cloned()
            .map(ReportLine::Record)
            .chain(std::iter::once(ReportLine::Summary(self.summary.clone())));
        for line in lines {
            out.push_str(&serde_json::to_string(&line).expect("report serializes"));
            out.push('\n');
        }
        out
    }
}

/// Read a report written by [`Report::to_jsonl`].
pub fn parse_report(reader: impl BufRead) -> Result<Report, EvalError> {
    let mut records = Vec::new();
    let mut summary = None;
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| EvalError::Report(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(&line)
            .map_err(|e| EvalError::Report(format!("line {}: {e}", i + 1)))?
        {
            ReportLine::Record(r) => records.push(r),
            ReportLine::Summary(s) => summary = Some(s),
        }
    }
    let summary = summary.ok_or_else(|| EvalError::Report("no summary line".into()))?;
    Ok(Report { summary, records })
}

#[derive(Serialize)]
struct FingerprintInput<'a> {
    index_mode: IndexMode,
    pipeline: &'a PipelineConfig,
    chunking: &'a ChunkingConfig,
    backends: &'a BackendNames,
    limit: Option<usize>,
    prompt_hashes: BTreeMap<String, String>,
    dataset_hash: &'a str,
}

fn fingerprint(cfg: &ExperimentConfig, backends: &BackendNames, dataset_hash: &str) -> String {
    let input = FingerprintInput {
        index_mode: cfg.index_mode,
        pipeline: &cfg.pipeline,
        chunking: &cfg.chunking,
        backends,
        limit: cfg.limit,
        prompt_hashes: prompts::template_hashes(),
        dataset_hash,
    };
    hex::encode(Sha256::digest(
        serde_json::to_vec(&input).expect("fingerprint serializes"),
    ))
}

fn evaluate(
    record: &EvalRecord,
    cfg: &ExperimentConfig,
    backends: &Backends,
    names: &BackendNames,
    cache: &IndexCache,
) -> RecordResult {
    let mut result = RecordResult {
        record_id: record.record_id.clone(),
        question: record.question.clone(),
        gold_answers: record.gold_answers.clone(),
        prediction: None,
        f1: 0.0,
        error: None,
        subquestions: Vec::new(),
        decomposition_fallback: false,
        ranked_ids: Vec::new(),
    };
    let docs = record.corpus();
    let key = cache_key(
        &docs,
        cfg.index_mode,
        &cfg.chunking,
        &names.embedder,
        &names.indexer,
    );
    let index = match cache.get_or_build(&key, || {
        build_index(
            &docs,
            cfg.index_mode,
            &cfg.chunking,
            backends.indexer.as_ref(),
            backends.embedder.as_ref(),
            BuildOptions::default(),
        )
    }) {
        Ok(idx) => idx,
        Err(e) => {
            result.error = Some(format!("index: {e}"));
            return result;
        }
    };
    match run_query(&record.question, &index, backends, &cfg.pipeline) {
        Ok(answer) => {
            result.f1 = super::qa_f1(&answer.text, &record.gold_answers);
            result.prediction = Some(answer.text);
            result.subquestions = answer.trace.subquestions;
            result.decomposition_fallback = answer.trace.decomposition_fallback;
            result.ranked_ids = answer.trace.ranked_ids;
        }
        Err(e) => result.error = Some(e.to_string()),
    }
    result
}

/// Evaluate every record of the dataset against its own index.
///
/// A failing record scores 0 with an error annotation unless
/// `cfg.strict`, in which case the first failure in record order is
/// returned.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    backends: &Backends,
    cache: &IndexCache,
) -> Result<Report, EvalError> {
    cfg.validate()?;
    let bytes = std::fs::read(&cfg.dataset).map_err(|source| EvalError::Io {
        path: cfg.dataset.display().to_string(),
        source,
    })?;
    let dataset_hash = hex::encode(Sha256::digest(&bytes));
    let mut records = load_dataset(&cfg.dataset)?;
    if let Some(limit) = cfg.limit {
        records.truncate(limit);
    }
    let names = BackendNames::of(backends);

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.parallelism)
        .build()
        .map_err(|e| EvalError::Config(e.to_string()))?;
    let results: Vec<RecordResult> = pool.install(|| {
        records
            .par_iter()
            .map(|r| evaluate(r, cfg, backends, &names, cache))
            .collect()
    });

    if cfg.strict {
        if let Some(r) = results.iter().find(|r| r.error.is_some()) {
            return Err(EvalError::Record {
                record_id: r.record_id.clone(),
                message: r.error.clone().unwrap_or_default(),
            });
        }
    }
    let errors = results.iter().filter(|r| r.error.is_some()).count();
    let aggregate_f1 = if results.is_empty() {
        0.0
    } else {
        results.iter().map(|r| r.f1).sum::<f64>() / results.len() as f64
    };
    let decomposition = cfg.pipeline.decompose.then(|| {
        CountStats::from_counts(
            results
                .iter()
                .filter(|r| r.error.is_none())
                .map(|r| r.subquestions.len()),
        )
    });
    Ok(Report {
        summary: ReportSummary {
            name: cfg.name.clone(),
            fingerprint: fingerprint(cfg, &names, &dataset_hash),
            index_mode: cfg.index_mode,
            pipeline: cfg.pipeline,
            chunking: cfg.chunking,
            backends: names,
            dataset_hash,
            limit: cfg.limit,
            records: results.len(),
            errors,
            aggregate_f1,
            decomposition,
        },
        records: results,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationOutput {
    pub reports: Vec<Report>,
    pub table: String,
}

/// Run each config in order, sharing `cache` so that configs differing
/// only in retrieval or inference settings reuse the same indexes.
pub fn run_ablation_grid(
    grid: &[ExperimentConfig],
    backends: &Backends,
    cache: &IndexCache,
) -> Result<AblationOutput, EvalError> {
    let reports = grid
        .iter()
        .map(|cfg| run_experiment(cfg, backends, cache))
        .collect::<Result<Vec<_>, _>>()?;
    let table = comparison_table(&reports);
    Ok(AblationOutput { reports, table })
}

fn dimensions(s: &ReportSummary) -> Vec<(&'static str, String)> {
    let p = &s.pipeline;
    vec![
        ("mode", s.index_mode.to_string()),
        ("decompose", p.decompose.to_string()),
        ("inference", p.inference.to_string()),
        ("k1", p.k1.to_string()),
        ("k2", p.k2.to_string()),
        ("max_subq", p.max_subquestions.to_string()),
        ("order", format!("{:?}", p.context_order).to_lowercase()),
        ("window", s.chunking.window().to_string()),
        ("stride", s.chunking.stride().to_string()),
        ("limit", s.limit.map_or("all".into(), |l| l.to_string())),
    ]
}

/// Plain-text table with one row per report, in the given order, showing
/// only the dimensions that differ between reports.
pub fn comparison_table(reports: &[Report]) -> String {
    if reports.is_empty() {
        return String::new();
    }
    let dims: Vec<_> = reports.iter().map(|r| dimensions(&r.summary)).collect();
    let varied: Vec<usize> = (0..dims[0].len())
        .filter(|&d| dims.iter().any(|row| row[d].1 != dims[0][d].1))
        .collect();

    let mut header = vec!["run".to_string()];
    if reports.iter().any(|r| !r.summary.name.is_empty()) {
        header.push("name".into());
    }
    let with_name = header.len() == 2;
    header.extend(varied.iter().map(|&d| dims[0][d].0.to_string()));
    header.extend(["F1".to_string(), "errors".to_string()]);

    let rows: Vec<Vec<String>> = reports
        .iter()
        .zip(&dims)
        .enumerate()
        .map(|(i, (r, row))| {
            let mut cells = vec![(i + 1).to_string()];
            if with_name {
                cells.push(r.summary.name.clone());
            }
            cells.extend(varied.iter().map(|&d| row[d].1.clone()));
            cells.push(format!("{:.4}", r.summary.aggregate_f1));
            cells.push(r.summary.errors.to_string());
            cells
        })
        .collect();

    let widths: Vec<usize> = (0..header.len())
        .map(|c| {
            rows.iter()
                .map(|r| r[c].chars().count())
                .chain(std::iter::once(header[c].len()))
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut out = String::new();
    for row in std::iter::once(&header).chain(&rows) {
        let cells: Vec<String> = row
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect();
        let _ = writeln!(out, "{}", cells.join(" | ").trim_end());
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompositionStats {
    /// Subquestion counts of questions that decomposed successfully.
    pub counts: CountStats,
    /// Questions whose decomposition came back empty.
    pub fallbacks: usize,
    pub errors: usize,
}

/// Decompose each question and summarize the subquestion counts.
pub fn decomposition_stats<S: AsRef<str>>(
    questions: &[S],
    decomposer: &dyn ChatBackend,
    max_subquestions: usize,
) -> DecompositionStats {
    let mut counts = Vec::new();
    let mut fallbacks = 0;
    let mut errors = 0;
    for q in questions {
        match transform::decompose_question_capped(q.as_ref(), decomposer, max_subquestions) {
            Ok(d) if d.fallback => fallbacks += 1,
            Ok(d) => counts.push(d.subquestions.len()),
            Err(e) => {
                log::warn!("decomposition failed for {:?}: {e}", q.as_ref());
                errors += 1;
            }
        }
    }
    DecompositionStats {
        counts: CountStats::from_counts(counts),
        fallbacks,
        errors,
    }
}
