//! Corpus loading and text-to-graph conversion.
//!
//! Corpus files are UTF-8 line-delimited JSON, one record per line:
//!
//! ```text
//! {"query": "...", "fragments": [{"id": "...", "text": "..."}], "answer": "..."}
//! ```
//!
//! Blank lines are skipped. Text becomes a co-occurrence graph: one node
//! per distinct normalized token (ids in first-occurrence order, features
//! from [`hash_features`]) and an undirected edge between any two distinct
//! tokens that occur within `window` positions of each other.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::io::BufRead;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use xxhash_rust::xxh64::xxh64;

use crate::graph::{Directedness, Edge, FeatureVector, KnowledgeGraph, NodeId};

/// Seed for the token feature hash. Changing it changes every embedding.
pub const FEATURE_HASH_SEED: u64 = 0x6772_6167_2d66_6831;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("text has no tokens after normalization")]
    EmptyText,
    #[error("invalid graph builder config: {0}")]
    InvalidConfig(String),
    #[error("corpus i/o: {0}")]
    Io(#[from] std::io::Error),
}

impl IngestError {
    pub fn class(&self) -> &'static str {
        match self {
            IngestError::Parse { .. } => "ParseError",
            IngestError::EmptyText => "EmptyText",
            IngestError::InvalidConfig(_) => "ConfigError",
            IngestError::Io(_) => "IoError",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fragment {
    pub id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub query: String,
    pub fragments: Vec<Fragment>,
    #[serde(rename = "answer")]
    pub reference_answer: String,
}

impl CorpusRecord {
    pub fn validate(&self) -> Result<(), String> {
        if self.query.trim().is_empty() {
            return Err("query is empty".into());
        }
        let mut seen = HashSet::new();
        for f in &self.fragments {
            if f.id.is_empty() {
                return Err("fragment id is empty".into());
            }
            if !seen.insert(f.id.as_str()) {
                return Err(format!("duplicate fragment id `{}`", f.id));
            }
        }
        Ok(())
    }

    /// The record as one corpus line (no trailing newline).
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("record serializes")
    }

    pub fn from_line(line: &str, line_no: usize) -> Result<Self, IngestError> {
        let record: CorpusRecord = serde_json::from_str(line).map_err(|e| IngestError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        record.validate().map_err(|message| IngestError::Parse {
            line: line_no,
            message,
        })?;
        Ok(record)
    }
}

/// Streams validated records in file order. Line numbers are 1-based.
pub fn parse_corpus<R: BufRead>(source: R) -> impl Iterator<Item = Result<CorpusRecord, IngestError>> {
    source
        .lines()
        .enumerate()
        .filter_map(|(i, line)| match line {
            Err(e) => Some(Err(IngestError::Io(e))),
            Ok(l) if l.trim().is_empty() => None,
            Ok(l) => Some(CorpusRecord::from_line(&l, i + 1)),
        })
}

pub fn read_corpus(path: impl AsRef<std::path::Path>) -> Result<Vec<CorpusRecord>, IngestError> {
    let file = std::fs::File::open(path)?;
    parse_corpus(std::io::BufReader::new(file)).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct GraphBuilderConfig {
    /// Maximum token distance that still produces an edge.
    pub window: usize,
    pub feature_dim: usize,
    pub lowercase: bool,
    pub min_token_len: usize,
}

impl Default for GraphBuilderConfig {
    fn default() -> Self {
        GraphBuilderConfig {
            window: 2,
            feature_dim: 64,
            lowercase: true,
            min_token_len: 1,
        }
    }
}

impl GraphBuilderConfig {
    pub fn validate(&self) -> Result<(), IngestError> {
        if self.window == 0 {
            return Err(IngestError::InvalidConfig("window must be >= 1".into()));
        }
        if self.feature_dim == 0 {
            return Err(IngestError::InvalidConfig("feature_dim must be >= 1".into()));
        }
        Ok(())
    }
}

/// Splits on whitespace, drops every non-alphanumeric character from each
/// piece and keeps pieces of at least `min_len` characters (and never empty
/// ones).
pub fn tokenize(text: &str, lowercase: bool, min_len: usize) -> Vec<String> {
    text.split_whitespace()
        .filter_map(|piece| {
            let mut tok: String = piece.chars().filter(|c| c.is_alphanumeric()).collect();
            if lowercase {
                tok = tok.to_lowercase();
            }
            let n = tok.chars().count();
            (n > 0 && n >= min_len).then_some(tok)
        })
        .collect()
}

/// Default normalization used by the metrics (lowercase, any length).
pub fn normalize(text: &str) -> Vec<String> {
    tokenize(text, true, 1)
}

static STOPWORDS_TXT: &str = include_str!("stopwords.txt");

fn stopwords() -> &'static HashSet<&'static str> {
    static SET: std::sync::OnceLock<HashSet<&'static str>> = std::sync::OnceLock::new();
    SET.get_or_init(|| {
        STOPWORDS_TXT
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .collect()
    })
}

pub fn is_stopword(token: &str) -> bool {
    stopwords().contains(token)
}

/// A normalized token that is at least three characters long and not a
/// stopword.
pub fn is_content_token(token: &str) -> bool {
    token.chars().count() >= 3 && !is_stopword(token)
}

/// Distinct content tokens of `text`.
pub fn content_tokens(text: &str) -> HashSet<String> {
    normalize(text).into_iter().filter(|t| is_content_token(t)).collect()
}

/// Dense unit-norm pseudo-random vector for `token`.
///
/// Component `i` is derived from `xxh64(token, FEATURE_HASH_SEED + i)`: the
/// low bit picks the sign and the remaining bits a magnitude in (0, 1].
/// xxh64 is specified byte-for-byte, so the vector is identical on every
/// platform.
pub fn hash_features(token: &str, dim: usize) -> FeatureVector {
    let bytes = token.as_bytes();
    let mut values: Vec<f64> = (0..dim as u64)
        .map(|i| {
            let h = xxh64(bytes, FEATURE_HASH_SEED.wrapping_add(i));
            let magnitude = ((h >> 11) as f64 + 1.0) / (1u64 << 53) as f64;
            if h & 1 == 1 {
                -magnitude
            } else {
                magnitude
            }
        })
        .collect();
    let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
    values.iter_mut().for_each(|v| *v /= norm);
    FeatureVector::new(values).expect("hashed features are finite")
}

pub fn text_to_graph(text: &str, config: &GraphBuilderConfig) -> Result<KnowledgeGraph, IngestError> {
    config.validate()?;
    let tokens = tokenize(text, config.lowercase, config.min_token_len);
    if tokens.is_empty() {
        return Err(IngestError::EmptyText);
    }

    let mut ids: HashMap<&str, u64> = HashMap::new();
    let mut nodes = Vec::new();
    let positions: Vec<u64> = tokens
        .iter()
        .map(|t| {
            let next = ids.len() as u64;
            *ids.entry(t.as_str()).or_insert_with(|| {
                nodes.push((NodeId(next), hash_features(t, config.feature_dim)));
                next
            })
        })
        .collect();

    let mut pairs = BTreeSet::new();
    for (i, &a) in positions.iter().enumerate() {
        for &b in positions.iter().skip(i + 1).take(config.window) {
            if a != b {
                pairs.insert((a.min(b), a.max(b)));
            }
        }
    }
    let edges = pairs.into_iter().map(|(a, b)| Edge::new(a, b)).collect();
    Ok(KnowledgeGraph::build(nodes, edges, Directedness::Undirected)
        .expect("co-occurrence graphs are valid by construction"))
}
