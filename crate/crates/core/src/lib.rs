//! Knowledge-graph embeddings for entity retrieval.
//!
//! The crate covers the whole experimental pipeline:
//!
//! * [`kg`] loads triple files, resolves redirects and accounts for entities
//!   that are missing from the graph or from an embedding space.
//! * [`walks`] turns a graph into random-walk sentences.
//! * [`sgns`] trains skip-gram embeddings with negative sampling over any
//!   token corpus, [`joint`] trains words and entities in one space from
//!   text, links and anchors, and [`complex`] trains ComplEx embeddings
//!   directly on triples.
//! * [`rerank`] re-scores a baseline entity run with confidence-weighted
//!   cosine similarity to the entities linked in each query.
//! * [`linking`] and [`eval`] evaluate entity linkers (lean precision and
//!   recall) and entity rankings (NDCG, paired t-test, coherence).

pub mod complex;
pub mod embedding;
pub mod error;
pub mod eval;
pub mod joint;
pub mod kg;
pub mod linking;
pub mod rerank;
pub mod sgns;
pub mod trec;
pub mod walks;

mod math;

pub use embedding::{cosine_slices, EmbeddingSpace, MissingEmbedding, PrefixedLookup, VectorLookup};
pub use error::{Error, Result};
pub use kg::{EntityId, KnowledgeGraph, RelationId, Triple};
