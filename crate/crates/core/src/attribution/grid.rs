//! Exhaustive search over similarity weights and attribution thresholds.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{attribute_from_scores, AttributionConfig, AttributionError, PairScores, SimilarityWeights};
use crate::corpus::CaseStudy;
use crate::embedding::EmbeddingProvider;
use crate::evaluation::{factuality, overall_score, relevance, EvaluationError, PipelineScore, RelevanceReport};

/// All weight triples on a lattice of the given step that sum to 1.
/// Without zeros every weight is at least `step`.
pub fn enumerate_weights(step: f64, include_zero: bool) -> Result<Vec<SimilarityWeights>, AttributionError> {
    if !(step > 0.0 && step <= 1.0) {
        return Err(AttributionError::InvalidStep);
    }
    let n = libm::round(1.0 / step);
    if (n * step - 1.0).abs() > 1e-9 {
        return Err(AttributionError::InvalidStep);
    }
    let n = n as usize;
    let lo = usize::from(!include_zero);
    let mut out = Vec::new();
    for i in lo..=n {
        for j in lo..=n.saturating_sub(i) {
            let Some(k) = n.checked_sub(i + j) else { continue };
            if k < lo {
                continue;
            }
            let d = n as f64;
            out.push(SimilarityWeights {
                lexical: i as f64 / d,
                fuzzy: j as f64 / d,
                semantic: k as f64 / d,
            });
        }
    }
    Ok(out)
}

/// Thresholds 0.1, 0.2, ..., 0.9.
pub fn default_thresholds() -> Vec<f64> {
    (1..=9).map(|i| i as f64 / 10.0).collect()
}

pub struct GridCase<'a> {
    pub case: &'a CaseStudy,
    pub answer_sentences: Vec<String>,
    /// Retrieved sentence ids available for attribution.
    pub retrieved: Vec<u32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub weights: SimilarityWeights,
    pub threshold: f64,
    pub score: PipelineScore,
}

/// Pair scores and relevance computed once; configurations are then cheap.
/// Cases without essential sentences are left out of the relevance average.
pub struct PreparedGrid<'a> {
    cases: Vec<&'a CaseStudy>,
    scores: Vec<PairScores>,
    relevance: RelevanceReport,
}

impl<'a> PreparedGrid<'a> {
    pub fn new(cases: &[GridCase<'a>], provider: &dyn EmbeddingProvider) -> Result<Self, AttributionError> {
        let mut scores = Vec::with_capacity(cases.len());
        let mut reports = Vec::with_capacity(cases.len());
        for gc in cases {
            if gc.retrieved.is_empty() {
                return Err(AttributionError::EmptyRetrieved);
            }
            let notes: Vec<(u32, &str)> = gc
                .retrieved
                .iter()
                .filter_map(|id| gc.case.sentence(*id).map(|s| (*id, s.text.as_str())))
                .collect();
            let answer: Vec<&str> = gc.answer_sentences.iter().map(String::as_str).collect();
            scores.push(PairScores::compute(&answer, &notes, provider)?);
            match relevance(&gc.answer_sentences.join(" "), gc.case, provider) {
                Ok(r) => reports.push(r),
                Err(EvaluationError::NoEssential(_)) => {}
                Err(e) => return Err(e.into()),
            }
        }
        Ok(PreparedGrid {
            cases: cases.iter().map(|c| c.case).collect(),
            scores,
            relevance: RelevanceReport::average(&reports),
        })
    }

    pub fn evaluate(&self, config: &AttributionConfig) -> Result<PipelineScore, AttributionError> {
        let mut cited = BTreeMap::new();
        for (case, scores) in self.cases.iter().zip(&self.scores) {
            let ids = attribute_from_scores(scores, config)
                .into_iter()
                .flat_map(|c| c.ids)
                .collect();
            cited.insert(case.case_id.clone(), ids);
        }
        let fact = factuality(self.cases.iter().copied(), &cited)?;
        Ok(overall_score(fact, self.relevance.clone()))
    }
}

/// Sorts rows by overall score, best first; ties keep enumeration order.
pub fn rank_rows(rows: &mut [GridRow]) {
    rows.sort_by(|a, b| b.score.overall.total_cmp(&a.score.overall));
}

pub fn grid_search(
    cases: &[GridCase<'_>],
    provider: &dyn EmbeddingProvider,
    weights: &[SimilarityWeights],
    thresholds: &[f64],
) -> Result<Vec<GridRow>, AttributionError> {
    let prepared = PreparedGrid::new(cases, provider)?;
    let mut rows = Vec::with_capacity(weights.len() * thresholds.len());
    for w in weights {
        for &t in thresholds {
            let config = AttributionConfig::new(*w, t)?;
            rows.push(GridRow {
                weights: *w,
                threshold: t,
                score: prepared.evaluate(&config)?,
            });
        }
    }
    rank_rows(&mut rows);
    Ok(rows)
}
