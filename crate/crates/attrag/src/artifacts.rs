//! On-disk records written by each pipeline stage.

use attrag_core::attribution::{AttributionConfig, Citation, SimilarityWeights};
use attrag_core::evaluation::RelevanceReport;
use attrag_core::generation::{AttributionMode, Generated, GenerationAttempt, PromptSpec};
use attrag_core::truncation::Diagnostics;
use attrag_core::{FactualityReport, QueryMode, RankedList};
use serde::{Deserialize, Serialize};

pub const RETRIEVAL: &str = "retrieval.json";
pub const GENERATION: &str = "generation.json";
pub const ATTRIBUTION: &str = "attribution.json";
pub const EVALUATION: &str = "evaluation.json";
pub const EVALUATION_CSV: &str = "evaluation.csv";
pub const GRID_SEARCH: &str = "grid_search.csv";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievalRecord {
    pub case_id: String,
    pub ranked: RankedList,
    pub kept_ids: Vec<u32>,
    pub cut_index: usize,
    pub diagnostics: Diagnostics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievalArtifact {
    pub strategy: String,
    pub query_mode: QueryMode,
    pub embedding: String,
    pub seed: u64,
    pub cases: Vec<RetrievalRecord>,
    /// Present when the dataset is labeled.
    pub evaluation: Option<FactualityReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub case_id: String,
    /// Evidence sentence ids in prompt order.
    pub evidence_ids: Vec<u32>,
    pub output: Option<Generated>,
    pub attempts: Vec<GenerationAttempt>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationArtifact {
    pub model: String,
    pub endpoint: String,
    pub prompt: PromptSpec,
    pub word_limit: usize,
    pub cases: Vec<GenerationRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributionRunConfig {
    pub mode: AttributionMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<SimilarityWeights>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
}

impl AttributionRunConfig {
    pub fn inline() -> Self {
        AttributionRunConfig {
            mode: AttributionMode::PostRetrieval,
            weights: None,
            threshold: None,
        }
    }

    pub fn post_generation(config: &AttributionConfig) -> Self {
        AttributionRunConfig {
            mode: AttributionMode::PostGeneration,
            weights: Some(config.weights),
            threshold: Some(config.threshold),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributionRecord {
    pub case_id: String,
    /// Answer sentences.
    pub answer: Vec<String>,
    pub citations: Vec<Citation>,
    pub config: AttributionRunConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributionArtifact {
    pub cases: Vec<AttributionRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseEvaluation {
    pub case_id: String,
    pub cited_ids: Vec<u32>,
    /// `None` when the case has no essential sentences.
    pub relevance: Option<RelevanceReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationArtifact {
    pub factuality: FactualityReport,
    pub relevance: RelevanceReport,
    pub overall: f64,
    pub per_case: Vec<CaseEvaluation>,
}
