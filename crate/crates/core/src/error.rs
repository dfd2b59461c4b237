use thiserror::Error;

use crate::eval::EvalError;
use crate::generation::GenerationError;
use crate::gnn::EncoderError;
use crate::graph::GraphError;
use crate::index::IndexError;
use crate::ingest::IngestError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Any failure raised by the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Generation(#[from] GenerationError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// Stable, greppable name of the failure class (`DimMismatch`,
    /// `CorruptIndex`, `AuthError`, ...).
    pub fn class(&self) -> &'static str {
        match self {
            Error::Graph(e) => e.class(),
            Error::Encoder(e) => e.class(),
            Error::Index(e) => e.class(),
            Error::Ingest(e) => e.class(),
            Error::Generation(e) => e.class(),
            Error::Eval(e) => e.class(),
            Error::Context { source, .. } => source.class(),
        }
    }

    pub fn context(self, context: impl Into<String>) -> Error {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }
}
