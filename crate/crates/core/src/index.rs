//! Fragment index with exact cosine top-k retrieval.
//!
//! Queries are a full scan: every stored embedding is scored against the
//! query and the best `k` are returned, highest score first, ties broken by
//! fragment id ascending. The scan runs on rayon under
//! [`Execution::Parallel`]; scoring is per entry so the ranking is identical
//! for both strategies.
//!
//! Mutation needs `&mut FragmentIndex` and queries need `&FragmentIndex`,
//! so share an index across threads behind `Arc` (read-only) or `RwLock`
//! (when fragments are still being added).
//!
//! # File layout
//!
//! All integers little-endian.
//!
//! ```text
//! magic        8 bytes   "GRAGIDX\0"
//! version      u32       1
//! dim          u32       embedding width
//! count        u64       number of entries
//! checksum     u32       CRC-32 (IEEE) of the body
//! body, per entry in insertion order:
//!   id_len     u32, id bytes (UTF-8)
//!   text_len   u32, payload bytes (UTF-8)
//!   embedding  dim x f64
//! ```

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gnn::{Embedding, Encoder, EncoderError};
use crate::graph::KnowledgeGraph;
use crate::par::{self, Execution};

const MAGIC: &[u8; 8] = b"GRAGIDX\0";
const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 8 + 4 + 4 + 8 + 4;

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("embedding width mismatch: index is {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("fragment `{0}` is already indexed")]
    DuplicateFragment(String),
    #[error("fragment id must be non-empty")]
    EmptyFragmentId,
    #[error("index is empty")]
    EmptyIndex,
    #[error("k must be >= 1")]
    ZeroK,
    #[error("corrupt index: {0}")]
    CorruptIndex(String),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error("index i/o: {0}")]
    Io(#[from] std::io::Error),
}

impl IndexError {
    pub fn class(&self) -> &'static str {
        match self {
            IndexError::DimMismatch { .. } => "DimMismatch",
            IndexError::DuplicateFragment(_) => "DuplicateFragment",
            IndexError::EmptyFragmentId => "InvalidFragmentId",
            IndexError::EmptyIndex => "EmptyIndex",
            IndexError::ZeroK => "UsageError",
            IndexError::CorruptIndex(_) => "CorruptIndex",
            IndexError::Encoder(e) => e.class(),
            IndexError::Io(_) => "IoError",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FragmentId(String);

impl FragmentId {
    pub fn new(id: impl Into<String>) -> Result<Self, IndexError> {
        let id = id.into();
        if id.is_empty() {
            return Err(IndexError::EmptyFragmentId);
        }
        Ok(FragmentId(id))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl std::borrow::Borrow<str> for FragmentId {
    fn borrow(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for FragmentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndexEntry {
    pub fragment_id: FragmentId,
    pub embedding: Embedding,
    pub payload: String,
    norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    pub fragment_id: FragmentId,
    pub score: f64,
}

/// Retrieval result: scores non-increasing, ties by id ascending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedHits {
    pub hits: Vec<Hit>,
    pub query_dim: usize,
}

impl RankedHits {
    pub fn ids(&self) -> impl Iterator<Item = &FragmentId> {
        self.hits.iter().map(|h| &h.fragment_id)
    }

    pub fn len(&self) -> usize {
        self.hits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hits.is_empty()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |acc, (x, y)| acc + x * y)
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn cosine_with_norms(a: &[f64], na: f64, b: &[f64], nb: f64) -> f64 {
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot(a, b) / (na * nb)
}

/// `a·b / (‖a‖‖b‖)`, or 0 when either vector has zero norm.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64, IndexError> {
    if a.len() != b.len() {
        return Err(IndexError::DimMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    Ok(cosine_with_norms(a, norm(a), b, norm(b)))
}

/// Ranking order: higher score first, then smaller fragment id.
pub fn rank_order(a: (&FragmentId, f64), b: (&FragmentId, f64)) -> Ordering {
    b.1.partial_cmp(&a.1)
        .expect("scores are finite")
        .then_with(|| a.0.cmp(b.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FragmentIndex {
    dim: usize,
    entries: Vec<IndexEntry>,
    by_id: HashMap<FragmentId, usize>,
}

impl FragmentIndex {
    pub fn new(dim: usize) -> Self {
        FragmentIndex {
            dim,
            entries: Vec::new(),
            by_id: HashMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[IndexEntry] {
        &self.entries
    }

    pub fn get(&self, id: &str) -> Option<&IndexEntry> {
        self.by_id.get(id).map(|&i| &self.entries[i])
    }

    pub fn contains(&self, id: &str) -> bool {
        self.by_id.contains_key(id)
    }

    /// Stores a precomputed embedding.
    pub fn insert(
        &mut self,
        fragment_id: FragmentId,
        embedding: Embedding,
        payload: impl Into<String>,
    ) -> Result<(), IndexError> {
        if embedding.dim() != self.dim {
            return Err(IndexError::DimMismatch {
                expected: self.dim,
                got: embedding.dim(),
            });
        }
        if self.by_id.contains_key(&fragment_id) {
            return Err(IndexError::DuplicateFragment(fragment_id.0));
        }
        let norm = norm(embedding.as_slice());
        self.by_id.insert(fragment_id.clone(), self.entries.len());
        self.entries.push(IndexEntry {
            fragment_id,
            embedding,
            payload: payload.into(),
            norm,
        });
        Ok(())
    }

    /// Encodes `graph` and stores it under `fragment_id`.
    pub fn add_fragment(
        &mut self,
        encoder: &Encoder,
        fragment_id: FragmentId,
        graph: &KnowledgeGraph,
        payload: impl Into<String>,
    ) -> Result<(), IndexError> {
        if self.by_id.contains_key(&fragment_id) {
            return Err(IndexError::DuplicateFragment(fragment_id.0));
        }
        let embedding = encoder.encode_graph(graph)?;
        self.insert(fragment_id, embedding, payload)
    }

    /// Encodes a batch of fragments (in parallel under `exec`) and inserts
    /// them in input order. Nothing is inserted if any id collides or any
    /// graph fails to encode.
    pub fn add_fragments(
        &mut self,
        encoder: &Encoder,
        fragments: Vec<(FragmentId, KnowledgeGraph, String)>,
        exec: Execution,
    ) -> Result<(), IndexError> {
        let mut fresh = std::collections::HashSet::new();
        for (id, _, _) in &fragments {
            if self.by_id.contains_key(id) || !fresh.insert(id) {
                return Err(IndexError::DuplicateFragment(id.0.clone()));
            }
        }
        if encoder.embedding_dim() != self.dim {
            return Err(IndexError::DimMismatch {
                expected: self.dim,
                got: encoder.embedding_dim(),
            });
        }
        let embeddings = par::map(exec, &fragments, |(_, g, _)| encoder.encode_graph(g));
        let embeddings = embeddings.into_iter().collect::<Result<Vec<_>, _>>()?;
        for ((id, _, payload), emb) in fragments.into_iter().zip(embeddings) {
            self.insert(id, emb, payload)?;
        }
        Ok(())
    }

    pub fn query_top_k(&self, query: &Embedding, k: usize) -> Result<RankedHits, IndexError> {
        self.query_top_k_with(query, k, Execution::default())
    }

    pub fn query_top_k_with(
        &self,
        query: &Embedding,
        k: usize,
        exec: Execution,
    ) -> Result<RankedHits, IndexError> {
        if k == 0 {
            return Err(IndexError::ZeroK);
        }
        if query.dim() != self.dim {
            return Err(IndexError::DimMismatch {
                expected: self.dim,
                got: query.dim(),
            });
        }
        if self.entries.is_empty() {
            return Err(IndexError::EmptyIndex);
        }
        let q = query.as_slice();
        let qn = norm(q);
        let scores = par::map(exec, &self.entries, |e| {
            cosine_with_norms(q, qn, e.embedding.as_slice(), e.norm)
        });

        let cmp = |&a: &usize, &b: &usize| {
            rank_order(
                (&self.entries[a].fragment_id, scores[a]),
                (&self.entries[b].fragment_id, scores[b]),
            )
        };
        let mut order: Vec<usize> = (0..self.entries.len()).collect();
        let k = k.min(order.len());
        if k < order.len() {
            order.select_nth_unstable_by(k - 1, cmp);
            order.truncate(k);
        }
        order.sort_unstable_by(cmp);

        Ok(RankedHits {
            hits: order
                .into_iter()
                .map(|i| Hit {
                    fragment_id: self.entries[i].fragment_id.clone(),
                    score: scores[i],
                })
                .collect(),
            query_dim: self.dim,
        })
    }

    pub fn save<W: Write>(&self, mut sink: W) -> Result<(), IndexError> {
        let mut body = Vec::new();
        for e in &self.entries {
            write_str(&mut body, e.fragment_id.as_str());
            write_str(&mut body, &e.payload);
            for v in e.embedding.as_slice() {
                body.extend_from_slice(&v.to_le_bytes());
            }
        }
        let mut header = Vec::with_capacity(HEADER_LEN);
        header.extend_from_slice(MAGIC);
        header.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        header.extend_from_slice(&(self.dim as u32).to_le_bytes());
        header.extend_from_slice(&(self.entries.len() as u64).to_le_bytes());
        header.extend_from_slice(&crc32fast::hash(&body).to_le_bytes());
        sink.write_all(&header)?;
        sink.write_all(&body)?;
        sink.flush()?;
        Ok(())
    }

    pub fn load<R: Read>(mut source: R) -> Result<Self, IndexError> {
        let mut bytes = Vec::new();
        source.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, IndexError> {
        let corrupt = |why: &str| IndexError::CorruptIndex(why.to_string());
        if bytes.len() < HEADER_LEN {
            return Err(corrupt("truncated header"));
        }
        let (header, body) = bytes.split_at(HEADER_LEN);
        if &header[..8] != MAGIC {
            return Err(corrupt("bad magic"));
        }
        let version = u32::from_le_bytes(header[8..12].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(IndexError::CorruptIndex(format!("unsupported version {version}")));
        }
        let dim = u32::from_le_bytes(header[12..16].try_into().unwrap()) as usize;
        let count = u64::from_le_bytes(header[16..24].try_into().unwrap());
        let checksum = u32::from_le_bytes(header[24..28].try_into().unwrap());
        if crc32fast::hash(body) != checksum {
            return Err(corrupt("checksum mismatch"));
        }

        let mut cursor = Cursor { bytes: body, pos: 0 };
        let mut index = FragmentIndex::new(dim);
        for _ in 0..count {
            let id = cursor.string().ok_or_else(|| corrupt("truncated entry id"))?;
            let payload = cursor.string().ok_or_else(|| corrupt("truncated payload"))?;
            let mut values = Vec::with_capacity(dim);
            for _ in 0..dim {
                let raw = cursor.take(8).ok_or_else(|| corrupt("truncated embedding"))?;
                values.push(f64::from_le_bytes(raw.try_into().unwrap()));
            }
            let embedding = Embedding::new(values).map_err(|_| corrupt("non-finite embedding"))?;
            let id = FragmentId::new(id).map_err(|_| corrupt("empty fragment id"))?;
            index.insert(id, embedding, payload).map_err(|e| match e {
                IndexError::DuplicateFragment(id) => {
                    IndexError::CorruptIndex(format!("duplicate fragment `{id}`"))
                }
                other => other,
            })?;
        }
        if cursor.pos != body.len() {
            return Err(corrupt("trailing bytes"));
        }
        Ok(index)
    }

    pub fn save_to_path(&self, path: impl AsRef<Path>) -> Result<(), IndexError> {
        let file = std::fs::File::create(path)?;
        self.save(std::io::BufWriter::new(file))
    }

    pub fn load_from_path(path: impl AsRef<Path>) -> Result<Self, IndexError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

fn write_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let out = self.bytes.get(self.pos..end)?;
        self.pos = end;
        Some(out)
    }

    fn string(&mut self) -> Option<String> {
        let len = u32::from_le_bytes(self.take(4)?.try_into().ok()?) as usize;
        String::from_utf8(self.take(len)?.to_vec()).ok()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn emb(v: &[f64]) -> Embedding {
        Embedding::new(v.to_vec()).unwrap()
    }

    fn fid(s: &str) -> FragmentId {
        FragmentId::new(s).unwrap()
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert_eq!(cosine_similarity(&[2.0, 0.0], &[1.0, 0.0]).unwrap(), 1.0);
        let c = cosine_similarity(&[1.0, 2.0, 2.0], &[2.0, 1.0, 2.0]).unwrap();
        assert!((c - 8.0 / 9.0).abs() <= 1e-12);
        assert_eq!(cosine_similarity(&[0.0, 0.0], &[1.0, 3.0]).unwrap(), 0.0);
        assert_eq!(cosine_similarity(&[1.0], &[1.0, 2.0]).unwrap_err().class(), "DimMismatch");
    }

    #[test]
    fn insert_and_query_basics() {
        let mut idx = FragmentIndex::new(2);
        idx.insert(fid("b"), emb(&[1.0, 0.0]), "B").unwrap();
        idx.insert(fid("a"), emb(&[1.0, 0.0]), "A").unwrap();
        idx.insert(fid("c"), emb(&[0.0, 1.0]), "C").unwrap();
        assert_eq!(idx.len(), 3);
        assert_eq!(
            idx.insert(fid("a"), emb(&[0.0, 1.0]), "dup").unwrap_err().class(),
            "DuplicateFragment"
        );

        let all = idx.query_top_k(&emb(&[1.0, 0.0]), 10).unwrap();
        assert_eq!(all.len(), 3);
        let one = idx.query_top_k(&emb(&[1.0, 0.0]), 1).unwrap();
        assert_eq!(one.hits[0].fragment_id.as_str(), "a");
        assert_eq!(one.hits[0].score, 1.0);

        assert_eq!(idx.query_top_k(&emb(&[1.0, 0.0]), 0).unwrap_err().class(), "UsageError");
        assert_eq!(idx.query_top_k(&emb(&[1.0]), 1).unwrap_err().class(), "DimMismatch");
        assert_eq!(
            FragmentIndex::new(2).query_top_k(&emb(&[1.0, 0.0]), 1).unwrap_err().class(),
            "EmptyIndex"
        );
    }

    #[test]
    fn zero_embeddings_sink() {
        let mut idx = FragmentIndex::new(2);
        idx.insert(fid("zero"), emb(&[0.0, 0.0]), "").unwrap();
        idx.insert(fid("neg"), emb(&[-1.0, -0.1]), "").unwrap();
        idx.insert(fid("pos"), emb(&[1.0, 0.2]), "").unwrap();
        let hits = idx.query_top_k(&emb(&[1.0, 0.0]), 3).unwrap();
        let ids: Vec<_> = hits.ids().map(FragmentId::as_str).collect();
        assert_eq!(ids, ["pos", "zero", "neg"]);
    }

    #[test]
    fn save_load_round_trip_and_corruption() {
        let mut idx = FragmentIndex::new(3);
        idx.insert(fid("x"), emb(&[0.1, -2.5, 3.0]), "payload x").unwrap();
        idx.insert(fid("y"), emb(&[1e-300, 0.0, -0.0]), "héllo").unwrap();
        let mut bytes = Vec::new();
        idx.save(&mut bytes).unwrap();
        assert_eq!(FragmentIndex::from_bytes(&bytes).unwrap(), idx);

        let err = FragmentIndex::from_bytes(&bytes[..bytes.len() - 3]).unwrap_err();
        assert_eq!(err.class(), "CorruptIndex");
        assert_eq!(FragmentIndex::from_bytes(&bytes[..10]).unwrap_err().class(), "CorruptIndex");
        let mut flipped = bytes.clone();
        *flipped.last_mut().unwrap() ^= 0x40;
        assert_eq!(FragmentIndex::from_bytes(&flipped).unwrap_err().class(), "CorruptIndex");
        let mut bad_magic = bytes;
        bad_magic[0] = b'X';
        assert_eq!(FragmentIndex::from_bytes(&bad_magic).unwrap_err().class(), "CorruptIndex");
    }

    #[test]
    fn empty_index_round_trip() {
        let idx = FragmentIndex::new(16);
        let mut bytes = Vec::new();
        idx.save(&mut bytes).unwrap();
        let back = FragmentIndex::from_bytes(&bytes).unwrap();
        assert!(back.is_empty());
        assert_eq!(back.dim(), 16);
    }
}
