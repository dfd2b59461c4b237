//! Proxy metrics and the retrieved-document-count sweep.
//!
//! Quality, knowledge consistency (KC) and reasoning capability (RC) are
//! token-overlap proxies, not human judgements:
//!
//! * quality: unigram F1 between the generated text and the reference answer;
//! * KC: share of the generated content tokens found in the retrieved
//!   fragments (1 when there are no content tokens);
//! * RC: harmonic mean of quality and the share of the record's fragments
//!   whose content tokens the generation touches.
//!
//! Each slot of [`MetricRegistry`] can be replaced without touching the
//! runner.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::generation::{GenerationCondition, Generator};
use crate::gnn::Encoder;
use crate::index::FragmentIndex;
use crate::ingest::{content_tokens, normalize, text_to_graph, CorpusRecord, GraphBuilderConfig};
use crate::par::{self, Execution};
use crate::Error;

/// Document counts swept by default.
pub const DEFAULT_K_LIST: [usize; 4] = [1, 3, 5, 10];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("nothing to evaluate")]
    EmptyInput,
    #[error("invalid k list: {0}")]
    InvalidKList(String),
    #[error("metric `{metric}` returned {value}, outside [0, 1]")]
    MetricOutOfRange { metric: String, value: f64 },
}

impl EvalError {
    pub fn class(&self) -> &'static str {
        match self {
            EvalError::EmptyInput => "EmptyInput",
            EvalError::InvalidKList(_) => "UsageError",
            EvalError::MetricOutOfRange { .. } => "MetricError",
        }
    }
}

/// Unigram F1 over token multisets.
pub fn quality_f1(generated: &str, reference: &str) -> f64 {
    let gen = normalize(generated);
    let reference = normalize(reference);
    if gen.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in &reference {
        *counts.entry(t).or_default() += 1;
    }
    let mut overlap = 0usize;
    for t in &gen {
        if let Some(c) = counts.get_mut(t.as_str()) {
            if *c > 0 {
                *c -= 1;
                overlap += 1;
            }
        }
    }
    if overlap == 0 {
        return 0.0;
    }
    let precision = overlap as f64 / gen.len() as f64;
    let recall = overlap as f64 / reference.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

pub fn kc_support<S: AsRef<str>>(generated: &str, fragments: &[S]) -> f64 {
    let claimed = content_tokens(generated);
    if claimed.is_empty() {
        return 1.0;
    }
    let known: HashSet<String> = fragments
        .iter()
        .flat_map(|f| normalize(f.as_ref()))
        .collect();
    let supported = claimed.iter().filter(|t| known.contains(*t)).count();
    supported as f64 / claimed.len() as f64
}

/// Share of the record's fragments that share a content token with
/// `generated`.
pub fn fragment_grounding(generated: &str, record: &CorpusRecord) -> f64 {
    if record.fragments.is_empty() {
        return 0.0;
    }
    let claimed = content_tokens(generated);
    let touched = record
        .fragments
        .iter()
        .filter(|f| !content_tokens(&f.text).is_disjoint(&claimed))
        .count();
    touched as f64 / record.fragments.len() as f64
}

pub fn rc_chain(generated: &str, record: &CorpusRecord) -> f64 {
    let f1 = quality_f1(generated, &record.reference_answer);
    let grounding = fragment_grounding(generated, record);
    if f1 == 0.0 || grounding == 0.0 {
        return 0.0;
    }
    2.0 * f1 * grounding / (f1 + grounding)
}

/// Everything a metric may look at for one record.
#[derive(Debug, Clone)]
pub struct EvalItem<'a> {
    pub record: &'a CorpusRecord,
    pub generated: String,
    /// Payload texts the generator was conditioned on.
    pub fragments_used: Vec<String>,
}

pub trait Metric: Send + Sync {
    fn name(&self) -> &str;
    /// Score in `[0, 1]`.
    fn score(&self, item: &EvalItem<'_>) -> f64;
}

pub struct QualityF1;
pub struct KcSupport;
pub struct RcChain;

impl Metric for QualityF1 {
    fn name(&self) -> &str {
        "quality_f1"
    }
    fn score(&self, item: &EvalItem<'_>) -> f64 {
        quality_f1(&item.generated, &item.record.reference_answer)
    }
}

impl Metric for KcSupport {
    fn name(&self) -> &str {
        "kc_support"
    }
    fn score(&self, item: &EvalItem<'_>) -> f64 {
        kc_support(&item.generated, &item.fragments_used)
    }
}

impl Metric for RcChain {
    fn name(&self) -> &str {
        "rc_chain"
    }
    fn score(&self, item: &EvalItem<'_>) -> f64 {
        rc_chain(&item.generated, item.record)
    }
}

/// The three report columns and the metric filling each.
pub struct MetricRegistry {
    quality: Box<dyn Metric>,
    kc: Box<dyn Metric>,
    rc: Box<dyn Metric>,
}

impl Default for MetricRegistry {
    fn default() -> Self {
        MetricRegistry {
            quality: Box::new(QualityF1),
            kc: Box::new(KcSupport),
            rc: Box::new(RcChain),
        }
    }
}

impl MetricRegistry {
    pub fn with_quality(mut self, m: impl Metric + 'static) -> Self {
        self.quality = Box::new(m);
        self
    }

    pub fn with_kc(mut self, m: impl Metric + 'static) -> Self {
        self.kc = Box::new(m);
        self
    }

    pub fn with_rc(mut self, m: impl Metric + 'static) -> Self {
        self.rc = Box::new(m);
        self
    }

    pub fn names(&self) -> [&str; 3] {
        [self.quality.name(), self.kc.name(), self.rc.name()]
    }

    fn score(&self, item: &EvalItem<'_>) -> Result<[f64; 3], EvalError> {
        let mut out = [0.0; 3];
        for (slot, m) in out.iter_mut().zip([&self.quality, &self.kc, &self.rc]) {
            let v = m.score(item);
            if !(0.0..=1.0).contains(&v) {
                return Err(EvalError::MetricOutOfRange {
                    metric: m.name().to_string(),
                    value: v,
                });
            }
            *slot = v;
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub quality: f64,
    pub kc: f64,
    pub rc: f64,
    pub n_records: usize,
}

fn mean_report(scores: &[[f64; 3]]) -> Result<MetricReport, EvalError> {
    if scores.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let mut sum = [0.0; 3];
    for s in scores {
        for (a, b) in sum.iter_mut().zip(s) {
            *a += b;
        }
    }
    let n = scores.len() as f64;
    Ok(MetricReport {
        quality: sum[0] / n,
        kc: sum[1] / n,
        rc: sum[2] / n,
        n_records: scores.len(),
    })
}

/// Mean of each metric over `items`. Scoring may run in parallel; the
/// reduction is always in input order.
pub fn evaluate(
    items: &[EvalItem<'_>],
    registry: &MetricRegistry,
    exec: Execution,
) -> Result<MetricReport, EvalError> {
    let scores = par::map(exec, items, |item| registry.score(item))
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
    mean_report(&scores)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub k: usize,
    #[serde(flatten)]
    pub report: MetricReport,
}

impl AblationRow {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("row serializes")
    }
}

/// Per-record failure during the sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecordFailure {
    /// 0-based position in the corpus.
    pub record: usize,
    pub k: Option<usize>,
    pub class: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationOutcome {
    pub rows: Vec<AblationRow>,
    /// `retrieved[record][j]`: fragment ids used at `rows[j].k` (empty when
    /// the record failed).
    pub retrieved: Vec<Vec<Vec<String>>>,
    pub failures: Vec<RecordFailure>,
}

pub struct AblationSetup<'a> {
    pub index: &'a FragmentIndex,
    pub encoder: &'a Encoder,
    pub builder: &'a GraphBuilderConfig,
    pub generator: &'a dyn Generator,
    pub registry: &'a MetricRegistry,
    pub max_tokens: usize,
    pub exec: Execution,
}

/// Sorted, validated copy of `k_list`.
pub fn normalize_k_list(k_list: &[usize]) -> Result<Vec<usize>, EvalError> {
    if k_list.is_empty() {
        return Err(EvalError::InvalidKList("empty".into()));
    }
    if k_list.contains(&0) {
        return Err(EvalError::InvalidKList("k must be >= 1".into()));
    }
    let set: BTreeSet<usize> = k_list.iter().copied().collect();
    if set.len() != k_list.len() {
        return Err(EvalError::InvalidKList("duplicate k".into()));
    }
    Ok(set.into_iter().collect())
}

type RecordResult = Result<Vec<([f64; 3], Vec<String>)>, RecordFailure>;

fn run_record(
    i: usize,
    record: &CorpusRecord,
    ks: &[usize],
    setup: &AblationSetup<'_>,
) -> RecordResult {
    let fail = |k: Option<usize>, e: Error| RecordFailure {
        record: i,
        k,
        class: e.class().to_string(),
        message: e.to_string(),
    };
    let graph = text_to_graph(&record.query, setup.builder).map_err(|e| fail(None, e.into()))?;
    let z_q = setup
        .encoder
        .encode_graph(&graph)
        .map_err(|e| fail(None, e.into()))?;

    ks.iter()
        .map(|&k| {
            let hits = setup
                .index
                .query_top_k_with(&z_q, k, Execution::Sequential)
                .map_err(|e| fail(Some(k), e.into()))?;
            let condition = GenerationCondition::from_hits(
                record.query.clone(),
                &hits,
                setup.index,
                setup.max_tokens,
                setup.generator.end_token(),
            );
            let generated = setup
                .generator
                .generate(&condition)
                .map_err(|e| fail(Some(k), e.into()))?;
            let item = EvalItem {
                record,
                generated: generated.answer,
                fragments_used: condition.fragments.iter().map(|f| f.payload.clone()).collect(),
            };
            let scores = setup
                .registry
                .score(&item)
                .map_err(|e| fail(Some(k), e.into()))?;
            Ok((scores, condition.fragment_ids()))
        })
        .collect()
}

/// For every `k`, each record's query is encoded, the top-`k` fragments are
/// retrieved, the generator is conditioned on them and the generation is
/// scored. One row per `k`, ascending. Records that fail are reported in
/// [`AblationOutcome::failures`] and left out of every row.
pub fn run_doc_count_ablation(
    records: &[CorpusRecord],
    setup: &AblationSetup<'_>,
    k_list: &[usize],
) -> Result<AblationOutcome, Error> {
    let ks = normalize_k_list(k_list)?;
    if records.is_empty() {
        return Err(EvalError::EmptyInput.into());
    }
    let per_record = par::map_range(setup.exec, records.len(), |i| {
        run_record(i, &records[i], &ks, setup)
    });

    let mut columns: Vec<Vec<[f64; 3]>> = vec![Vec::new(); ks.len()];
    let mut retrieved = Vec::with_capacity(records.len());
    let mut failures = Vec::new();
    for result in per_record {
        match result {
            Ok(per_k) => {
                let mut ids = Vec::with_capacity(ks.len());
                for (col, (scores, used)) in columns.iter_mut().zip(per_k) {
                    col.push(scores);
                    ids.push(used);
                }
                retrieved.push(ids);
            }
            Err(f) => {
                log::warn!("record {} failed: {}", f.record, f.message);
                failures.push(f);
                retrieved.push(Vec::new());
            }
        }
    }

    let rows = ks
        .iter()
        .zip(&columns)
        .map(|(&k, scores)| Ok(AblationRow { k, report: mean_report(scores)? }))
        .collect::<Result<Vec<_>, EvalError>>()?;
    Ok(AblationOutcome {
        rows,
        retrieved,
        failures,
    })
}

pub fn rows_to_jsonl(rows: &[AblationRow]) -> String {
    rows.iter().map(|r| r.to_json_line() + "\n").collect()
}

pub fn rows_from_jsonl(text: &str) -> Result<Vec<AblationRow>, serde_json::Error> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str)
        .collect()
}

/// Aligned plain-text table with the sweep's column headings.
pub fn format_table(rows: &[AblationRow]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:<21}{:>9}{:>9}{:>9}", "Number of documents", "Quality", "KC", "RC");
    for r in rows {
        let _ = writeln!(
            out,
            "{:<21}{:>9.4}{:>9.4}{:>9.4}",
            r.k, r.report.quality, r.report.kc, r.report.rc
        );
    }
    let _ = writeln!(
        out,
        "(Quality = token F1 vs. reference; KC = content-token support in retrieved fragments; RC = F1 x fragment-grounding harmonic mean. Proxy metrics.)"
    );
    out
}
