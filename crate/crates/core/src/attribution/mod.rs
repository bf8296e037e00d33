//! Answer sentences and their citations: parsing inline citations, and
//! attributing uncited answers to note sentences after generation.

mod citation;
mod grid;
mod similarity;

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

pub use citation::{parse_citations, render_citations, split_sentences};
pub use grid::{default_thresholds, enumerate_weights, grid_search, rank_rows, GridCase, GridRow, PreparedGrid};
pub use similarity::{
    combined_score, component_scores, fuzzy_sim, lexical_sim, semantic_sim, ComponentScores, PairScores,
};

use crate::embedding::{EmbeddingError, EmbeddingProvider};
use crate::evaluation::EvaluationError;

const WEIGHT_SUM_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Citation {
    /// Zero-based index of the answer sentence.
    pub sentence: usize,
    pub ids: BTreeSet<u32>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Answer {
    pub sentences: Vec<String>,
    pub citations: Vec<Citation>,
}

impl Answer {
    pub fn cited_ids(&self) -> BTreeSet<u32> {
        self.citations.iter().flat_map(|c| c.ids.iter().copied()).collect()
    }

    pub fn text(&self) -> String {
        self.sentences.join(" ")
    }

    pub fn word_count(&self) -> usize {
        self.sentences.iter().map(|s| s.split_whitespace().count()).sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum AttributionError {
    Unbalanced { offset: usize },
    MalformedBlock { offset: usize },
    NoValidAttribution,
    EmptyRetrieved,
    InvalidWeights,
    InvalidThreshold,
    InvalidStep,
    Embedding(EmbeddingError),
    Evaluation(EvaluationError),
}

impl fmt::Display for AttributionError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AttributionError::Unbalanced { offset } => write!(f, "unbalanced citation block at byte {offset}"),
            AttributionError::MalformedBlock { offset } => write!(f, "malformed citation block at byte {offset}"),
            AttributionError::NoValidAttribution => f.write_str("no valid attribution"),
            AttributionError::EmptyRetrieved => f.write_str("no retrieved sentences to attribute to"),
            AttributionError::InvalidWeights => f.write_str("weights must be non-negative and sum to 1"),
            AttributionError::InvalidThreshold => f.write_str("threshold must lie in (0, 1)"),
            AttributionError::InvalidStep => f.write_str("weight step must divide 1 evenly"),
            AttributionError::Embedding(e) => write!(f, "{e}"),
            AttributionError::Evaluation(e) => write!(f, "{e}"),
        }
    }
}

impl core::error::Error for AttributionError {}

impl From<EmbeddingError> for AttributionError {
    fn from(e: EmbeddingError) -> Self {
        AttributionError::Embedding(e)
    }
}

impl From<EvaluationError> for AttributionError {
    fn from(e: EvaluationError) -> Self {
        AttributionError::Evaluation(e)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimilarityWeights {
    pub lexical: f64,
    pub fuzzy: f64,
    pub semantic: f64,
}

impl SimilarityWeights {
    pub fn new(lexical: f64, fuzzy: f64, semantic: f64) -> Result<Self, AttributionError> {
        let w = SimilarityWeights { lexical, fuzzy, semantic };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<(), AttributionError> {
        let parts = [self.lexical, self.fuzzy, self.semantic];
        if parts.iter().any(|w| !(0.0..=1.0).contains(w))
            || (parts.iter().sum::<f64>() - 1.0).abs() > WEIGHT_SUM_TOLERANCE
        {
            return Err(AttributionError::InvalidWeights);
        }
        Ok(())
    }
}

impl Default for SimilarityWeights {
    fn default() -> Self {
        SimilarityWeights {
            lexical: 0.0,
            fuzzy: 0.5,
            semantic: 0.5,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributionConfig {
    pub weights: SimilarityWeights,
    pub threshold: f64,
}

impl AttributionConfig {
    pub fn new(weights: SimilarityWeights, threshold: f64) -> Result<Self, AttributionError> {
        weights.validate()?;
        if !(threshold > 0.0 && threshold < 1.0) {
            return Err(AttributionError::InvalidThreshold);
        }
        Ok(AttributionConfig { weights, threshold })
    }
}

impl Default for AttributionConfig {
    fn default() -> Self {
        AttributionConfig {
            weights: SimilarityWeights::default(),
            threshold: 0.5,
        }
    }
}

/// Citations from a precomputed score matrix: each answer sentence cites
/// every note sentence scoring strictly above the threshold.
pub fn attribute_from_scores(scores: &PairScores, config: &AttributionConfig) -> Vec<Citation> {
    scores
        .rows
        .iter()
        .enumerate()
        .filter_map(|(sentence, row)| {
            let ids: BTreeSet<u32> = row
                .iter()
                .zip(&scores.note_ids)
                .filter(|(c, _)| c.combine(&config.weights) > config.threshold)
                .map(|(_, id)| *id)
                .collect();
            (!ids.is_empty()).then_some(Citation { sentence, ids })
        })
        .collect()
}

/// Attributes each answer sentence to the retrieved note sentences it
/// resembles. `retrieved` pairs sentence ids with their text.
pub fn attribute_post_generation(
    answer_sentences: &[&str],
    retrieved: &[(u32, &str)],
    config: &AttributionConfig,
    provider: &dyn EmbeddingProvider,
) -> Result<Answer, AttributionError> {
    if retrieved.is_empty() {
        return Err(AttributionError::EmptyRetrieved);
    }
    config.weights.validate()?;
    let scores = PairScores::compute(answer_sentences, retrieved, provider)?;
    Ok(Answer {
        sentences: answer_sentences.iter().map(|s| String::from(*s)).collect(),
        citations: attribute_from_scores(&scores, config),
    })
}
