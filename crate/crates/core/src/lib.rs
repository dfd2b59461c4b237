//! Graph-structured retrieval-augmented generation.
//!
//! The pipeline turns knowledge fragments into small graphs, encodes each
//! graph with a forward-only message-passing network, retrieves the
//! fragments whose embeddings are closest (cosine) to an encoded query and
//! conditions a generator on them. [`eval`] scores the generations with
//! token-overlap proxy metrics and replays a retrieved-document-count sweep.
//!
//! Data-parallel hot paths (batch encoding, index scans, per-record
//! evaluation) run on rayon when the `parallel` feature is enabled and fall
//! back to plain iterators otherwise. See [`Execution`].

pub mod error;
pub mod eval;
pub mod generation;
pub mod gnn;
pub mod graph;
pub mod index;
pub mod ingest;
mod par;

pub use error::{Error, Result};
pub use eval::{AblationRow, MetricRegistry, MetricReport};
pub use generation::{
    ExternalClient, ExternalConfig, GenerationCondition, GenerationRecord, Generator,
    ToyDecoderParams, ToyGenerator,
};
pub use gnn::{Activation, Aggregator, Embedding, Encoder, GnnConfig, GnnParams};
pub use graph::{Edge, FeatureVector, KnowledgeGraph, NodeId};
pub use index::{FragmentId, FragmentIndex, RankedHits};
pub use ingest::{CorpusRecord, GraphBuilderConfig};
pub use par::Execution;
