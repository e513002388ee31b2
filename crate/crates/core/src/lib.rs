//! Placement of new concept mentions into the subsumption edges of an ontology.
//!
//! The pipeline has three stages:
//!
//! 1. **Edge search** ranks seed concepts ([`lexical`], fixed embeddings) or
//!    seed edges (edge bi-encoder dot products, [`embedding`]).
//! 2. **Edge formation and enrichment** ([`candidates`]) turns seeds into a
//!    top-k [`candidates::CandidateSlate`] by walking one hop up and down the
//!    ontology graph.
//! 3. **Edge selection** ([`selection`]) re-ranks the slate with a
//!    cross-encoder style scorer or an instruction-following LLM.
//!
//! [`eval`] computes insertion rates over placement datasets.

pub mod candidates;
pub mod embedding;
pub mod eval;
pub mod lexical;
pub mod ontology;
pub mod parallel;
pub mod selection;
pub mod stub;

pub use candidates::{CandidateGenerator, CandidateSlate, EdgeOrigin, ScoredEdge, SearchMethod};
pub use embedding::{ContextualMention, EmbeddingStore, EmbeddingVector};
pub use eval::{EvaluationReport, PlacementDataset, PredictionRecord};
pub use lexical::{InvertedIndex, Tokenizer};
pub use ontology::{Concept, ConceptId, Edge, EdgeChild, Ontology};
