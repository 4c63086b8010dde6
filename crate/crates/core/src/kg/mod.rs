//! Triple ingestion, vocabularies, graph indexing and context sampling.

mod dataset;
mod graph;
mod sample;
mod vocab;

pub use dataset::{load_dataset, parse_triples, Dataset, InductiveGraph, Mode, RawTriple};
pub use graph::{Direction, EdgeId, Incidence, KnowledgeGraph};
pub use sample::{sample_context, ContextSubgraph, SampledEdge, SamplingConfig};
pub use vocab::Vocab;

use std::path::PathBuf;

use thiserror::Error;

/// `(head, relation, tail)` by dense index.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Triple {
    pub head: usize,
    pub rel: usize,
    pub tail: usize,
}

impl Triple {
    pub fn new(head: usize, rel: usize, tail: usize) -> Self {
        Self { head, rel, tail }
    }
}

#[derive(Debug, Error)]
pub enum KgError {
    #[error("{path}:{line}: expected 3 tab-separated fields, found {found}")]
    Parse {
        path: PathBuf,
        line: usize,
        found: usize,
    },
    #[error("{0}: split contains no triples")]
    EmptySplit(PathBuf),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}:{line}: relation {relation:?} does not occur in the training graph")]
    UnknownRelation {
        path: PathBuf,
        line: usize,
        relation: String,
    },
    #[error("triple {index} {triple:?} out of range for {entities} entities / {relations} relations")]
    OutOfRange {
        index: usize,
        triple: Triple,
        entities: usize,
        relations: usize,
    },
    #[error("invalid sampling configuration: {0}")]
    Config(String),
    #[error("entity {entity} out of range for {entities} entities")]
    UnknownEntity { entity: usize, entities: usize },
}
