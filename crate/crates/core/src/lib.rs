//! Core algorithms for attributed answer generation over clinical note
//! excerpts: the case data model, cosine retrieval over an exact per-case
//! index, ranked-list truncation strategies (fixed-k, re-rank, autocut,
//! autocut*, elbow, surprise), citation handling and post-generation
//! attribution, prompt construction with a validity-retry loop, and the
//! factuality/relevance evaluation protocol.
//!
//! The crate is `no_std` and only needs `alloc`. File formats, HTTP
//! providers and the command line live in the `attrag` crate.
#![cfg_attr(not(test), no_std)]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod attribution;
pub mod corpus;
pub mod embedding;
pub mod evaluation;
pub mod generation;
pub mod text;
pub mod truncation;

pub use attribution::{
    Answer, AttributionConfig, AttributionError, Citation, SimilarityWeights,
};
pub use corpus::{CaseStudy, CorpusError, Dataset, NoteSentence, QueryMode, RelevanceLabel, Split};
pub use embedding::{EmbeddingError, EmbeddingProvider, RankedList, Vector, VectorIndex};
pub use evaluation::{FactualityReport, PipelineScore, RelevanceReport};
pub use generation::{LlmClient, PromptSpec};
pub use truncation::{Strategy, TruncationError, TruncationResult};
