//! Command implementations behind the `grag` binary and the HTTP service.
//!
//! Every command returns its stdout text instead of printing, so the binary,
//! the service and the tests share one code path.

pub mod config;
pub mod server;

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use grag_core::eval::{
    format_table, rows_to_jsonl, run_doc_count_ablation, AblationOutcome, AblationSetup,
};
use grag_core::generation::{ExternalClient, ExternalConfig, ExternalGenerator, FinishReason};
use grag_core::index::IndexError;
use grag_core::ingest::{read_corpus, text_to_graph};
use grag_core::{
    CorpusRecord, Encoder, Execution, FragmentId, FragmentIndex, GenerationCondition,
    GenerationRecord, Generator, MetricRegistry, RankedHits, ToyDecoderParams, ToyGenerator,
};

pub use config::{ConfigFile, FlagOverrides, GeneratorKind, RunConfig};

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] grag_core::Error),
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Server(String),
    #[error("{failed} of {total} records failed")]
    RecordFailures { failed: usize, total: usize },
}

impl CliError {
    pub fn class(&self) -> &'static str {
        match self {
            CliError::Core(e) => e.class(),
            CliError::Usage(_) => "UsageError",
            CliError::Config(_) => "ConfigError",
            CliError::Io { .. } => "IoError",
            CliError::Server(_) => "ServerError",
            CliError::RecordFailures { .. } => "RecordFailure",
        }
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// One-line rendering used for process exits: `error[Class]: message`.
    pub fn render(&self) -> String {
        let msg = self.to_string().replace('\n', " ");
        format!("error[{}]: {msg}", self.class())
    }
}

macro_rules! from_core {
    ($($t:ty),+) => {
        $(impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Core(e.into())
            }
        })+
    };
}

from_core!(
    grag_core::graph::GraphError,
    grag_core::gnn::EncoderError,
    IndexError,
    grag_core::ingest::IngestError,
    grag_core::generation::GenerationError,
    grag_core::eval::EvalError
);

fn with_context<T, E: Into<grag_core::Error>>(r: Result<T, E>, ctx: impl FnOnce() -> String) -> Result<T, CliError> {
    r.map_err(|e| CliError::Core(e.into().context(ctx())))
}

pub fn build_encoder(cfg: &RunConfig) -> Result<Encoder, CliError> {
    let encoder = match &cfg.params {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            with_context(Encoder::from_param_json(&text), || path.display().to_string())?
        }
        None => Encoder::seeded(cfg.gnn.clone(), cfg.seed)?,
    };
    if encoder.config().input_dim != cfg.graph_builder.feature_dim {
        return Err(CliError::Config(format!(
            "encoder input width {} does not match graph_builder.feature_dim {}",
            encoder.config().input_dim,
            cfg.graph_builder.feature_dim
        )));
    }
    Ok(encoder)
}

fn require_corpus(cfg: &RunConfig) -> Result<&Path, CliError> {
    cfg.corpus
        .as_deref()
        .ok_or_else(|| CliError::Usage("--corpus is required".into()))
}

pub fn load_index(path: &Path) -> Result<FragmentIndex, CliError> {
    with_context(FragmentIndex::load_from_path(path), || path.display().to_string())
}

pub struct LoadedCorpus {
    pub records: Vec<CorpusRecord>,
    /// Distinct `(id, text)` pairs in first-seen order.
    pub fragments: Vec<(String, String)>,
}

/// Reads the corpus. A fragment id repeated with identical text is indexed
/// once; repeated with different text it is an error.
pub fn load_corpus(path: &Path) -> Result<LoadedCorpus, CliError> {
    let records = with_context(read_corpus(path), || path.display().to_string())?;
    let mut seen: HashMap<&str, &str> = HashMap::new();
    let mut fragments = Vec::new();
    for (i, record) in records.iter().enumerate() {
        for f in &record.fragments {
            match seen.get(f.id.as_str()) {
                Some(text) if *text == f.text => {}
                Some(_) => {
                    let err: grag_core::Error = IndexError::DuplicateFragment(f.id.clone()).into();
                    return Err(CliError::Core(err.context(format!(
                        "{}: record {} reuses the id with different text",
                        path.display(),
                        i + 1
                    ))));
                }
                None => {
                    seen.insert(&f.id, &f.text);
                    fragments.push((f.id.clone(), f.text.clone()));
                }
            }
        }
    }
    Ok(LoadedCorpus { records, fragments })
}

/// Builds an in-memory index over `fragments`.
pub fn build_index(
    cfg: &RunConfig,
    encoder: &Encoder,
    fragments: Vec<(String, String)>,
) -> Result<FragmentIndex, CliError> {
    let mut batch = Vec::with_capacity(fragments.len());
    for (id, text) in fragments {
        let graph = with_context(text_to_graph(&text, &cfg.graph_builder), || format!("fragment `{id}`"))?;
        let fid = with_context(FragmentId::new(id), || "fragment id".to_string())?;
        batch.push((fid, graph, text));
    }
    let mut index = FragmentIndex::new(encoder.embedding_dim());
    index.add_fragments(encoder, batch, Execution::default())?;
    Ok(index)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct IngestSummary {
    pub records: usize,
    pub fragments: usize,
    pub embedding_dim: usize,
    pub index: PathBuf,
}

impl IngestSummary {
    pub fn render(&self) -> String {
        format!(
            "ingested {} fragments from {} records (embedding_dim {}) -> {}\n",
            self.fragments,
            self.records,
            self.embedding_dim,
            self.index.display()
        )
    }
}

pub fn cmd_ingest(cfg: &RunConfig) -> Result<IngestSummary, CliError> {
    let corpus = require_corpus(cfg)?;
    let encoder = build_encoder(cfg)?;
    let LoadedCorpus { records, fragments } = load_corpus(corpus)?;
    let index = build_index(cfg, &encoder, fragments)?;
    with_context(index.save_to_path(&cfg.index), || cfg.index.display().to_string())?;
    Ok(IngestSummary {
        records: records.len(),
        fragments: index.len(),
        embedding_dim: index.dim(),
        index: cfg.index.clone(),
    })
}

pub fn make_generator(
    kind: GeneratorKind,
    index: &FragmentIndex,
    end_bias: f64,
) -> Result<Box<dyn Generator>, CliError> {
    Ok(match kind {
        GeneratorKind::Toy => Box::new(ToyGenerator::new(ToyDecoderParams::from_index(index, end_bias)?)),
        GeneratorKind::External => {
            let config = ExternalConfig::from_env()?;
            Box::new(ExternalGenerator::new(ExternalClient::new(config)))
        }
    })
}

/// A loaded index plus everything needed to answer queries against it.
pub struct Pipeline {
    pub index: FragmentIndex,
    pub encoder: Encoder,
    pub config: RunConfig,
    generator: Option<Box<dyn Generator>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Answer {
    pub answer: String,
    pub fragment_ids: Vec<String>,
    pub scores: Vec<f64>,
    #[serde(skip)]
    pub record: GenerationRecord,
}

impl Pipeline {
    pub fn new(index: FragmentIndex, config: RunConfig) -> Result<Self, CliError> {
        let encoder = build_encoder(&config)?;
        if encoder.embedding_dim() != index.dim() {
            let err: grag_core::Error = IndexError::DimMismatch {
                expected: index.dim(),
                got: encoder.embedding_dim(),
            }
            .into();
            return Err(CliError::Core(err.context("index was built with a different encoder config")));
        }
        Ok(Pipeline {
            index,
            encoder,
            config,
            generator: None,
        })
    }

    pub fn open(config: &RunConfig) -> Result<Self, CliError> {
        Self::new(load_index(&config.index)?, config.clone())
    }

    pub fn with_generator(mut self) -> Result<Self, CliError> {
        self.generator = Some(make_generator(self.config.generator, &self.index, self.config.end_bias)?);
        Ok(self)
    }

    pub fn has_generator(&self) -> bool {
        self.generator.is_some()
    }

    pub fn retrieve(&self, text: &str, k: usize) -> Result<RankedHits, CliError> {
        if k == 0 {
            return Err(IndexError::ZeroK.into());
        }
        let graph = with_context(text_to_graph(text, &self.config.graph_builder), || "query".to_string())?;
        let z = self.encoder.encode_graph(&graph)?;
        Ok(self.index.query_top_k(&z, k)?)
    }

    pub fn answer(&self, text: &str, k: usize) -> Result<(Answer, RankedHits), CliError> {
        let generator = self
            .generator
            .as_deref()
            .ok_or_else(|| CliError::Config("no generator configured".into()))?;
        let hits = self.retrieve(text, k)?;
        let condition = GenerationCondition::from_hits(
            text,
            &hits,
            &self.index,
            self.config.max_tokens,
            generator.end_token(),
        );
        let record = generator.generate(&condition)?;
        let answer = Answer {
            answer: record.answer.clone(),
            fragment_ids: record.fragment_ids.clone(),
            scores: hits.hits.iter().map(|h| h.score).collect(),
            record,
        };
        Ok((answer, hits))
    }
}

pub fn format_hits(hits: &RankedHits) -> String {
    let mut out = String::new();
    for (rank, h) in hits.hits.iter().enumerate() {
        let _ = writeln!(out, "{}  {:.6}  {}", rank + 1, h.score, h.fragment_id);
    }
    out
}

pub fn cmd_query(cfg: &RunConfig, text: &str, json: bool) -> Result<String, CliError> {
    cfg.validate()?;
    let hits = Pipeline::open(cfg)?.retrieve(text, cfg.k)?;
    Ok(if json {
        serde_json::to_string(&hits).expect("hits serialize") + "\n"
    } else {
        format_hits(&hits)
    })
}

pub fn cmd_generate(cfg: &RunConfig, text: &str, trace: bool) -> Result<String, CliError> {
    cfg.validate()?;
    let pipeline = Pipeline::open(cfg)?.with_generator()?;
    let (answer, hits) = pipeline.answer(text, cfg.k)?;
    let mut out = String::new();
    if trace {
        for (rank, h) in hits.hits.iter().enumerate() {
            let _ = writeln!(out, "trace: retrieved {}  {:.6}  {}", rank + 1, h.score, h.fragment_id);
        }
        let finished = match answer.record.finished_by {
            FinishReason::EndToken => "end_token",
            FinishReason::MaxTokens => "max_tokens",
        };
        let _ = writeln!(out, "trace: tokens {}  finished_by {finished}", answer.record.tokens.len());
    }
    let _ = writeln!(out, "{}", answer.answer);
    let _ = writeln!(out, "{}", serde_json::to_string(&answer.record).expect("record serializes"));
    Ok(out)
}

#[derive(Debug)]
pub struct BenchReport {
    pub outcome: AblationOutcome,
    pub table: String,
    pub jsonl_path: PathBuf,
    pub table_path: PathBuf,
}

/// Runs the document-count sweep. Uses the index at `cfg.index` when it
/// exists, otherwise indexes the corpus in memory first.
pub fn cmd_bench(cfg: &RunConfig) -> Result<BenchReport, CliError> {
    let corpus = require_corpus(cfg)?;
    let LoadedCorpus { records, fragments } = load_corpus(corpus)?;
    let pipeline = if cfg.index.exists() {
        Pipeline::open(cfg)?
    } else {
        log::info!("{} not found, indexing {} in memory", cfg.index.display(), corpus.display());
        let encoder = build_encoder(cfg)?;
        Pipeline::new(build_index(cfg, &encoder, fragments)?, cfg.clone())?
    }
    .with_generator()?;

    let registry = MetricRegistry::default();
    let setup = AblationSetup {
        index: &pipeline.index,
        encoder: &pipeline.encoder,
        builder: &cfg.graph_builder,
        generator: pipeline.generator.as_deref().expect("generator attached"),
        registry: &registry,
        max_tokens: cfg.max_tokens,
        exec: Execution::default(),
    };
    let outcome = run_doc_count_ablation(&records, &setup, &cfg.k_list)?;

    std::fs::create_dir_all(&cfg.out).map_err(|e| CliError::io(&cfg.out, e))?;
    let jsonl_path = cfg.out.join("ablation.jsonl");
    let table_path = cfg.out.join("ablation.txt");
    let table = format_table(&outcome.rows);
    std::fs::write(&jsonl_path, rows_to_jsonl(&outcome.rows)).map_err(|e| CliError::io(&jsonl_path, e))?;
    std::fs::write(&table_path, &table).map_err(|e| CliError::io(&table_path, e))?;
    Ok(BenchReport {
        outcome,
        table,
        jsonl_path,
        table_path,
    })
}
