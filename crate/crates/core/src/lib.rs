//! Answerable-question guided retrieval-augmented generation for multihop
//! question answering.
//!
//! Offline, documents are chunked ([`corpus`]), each chunk is turned into
//! questions it can answer ([`transform`]), and those questions are embedded
//! into a [`index::VectorIndex`] pointing back at their chunks. Online, a
//! question is decomposed into single-hop subquestions, each retrieves
//! similar questions from the index, the pooled chunks are reranked against
//! the original question, and the top chunks go to the generator
//! ([`pipeline`]). [`evalkit`] scores runs with token F1 over benchmark
//! datasets and drives ablation grids.

pub mod corpus;
pub mod evalkit;
pub mod gateway;
pub mod index;
pub mod pipeline;
pub mod prompts;
pub mod stats;
pub mod text;
pub mod transform;

pub use corpus::{Chunk, ChunkingConfig, Document};
pub use gateway::{ChatBackend, EmbeddingBackend, EmbeddingVector, Reranker};
pub use index::{IndexMode, VectorIndex};
pub use pipeline::{Answer, Backends, PipelineConfig};
pub use stats::CountStats;
pub use transform::{SubQuestion, TransformKind};
