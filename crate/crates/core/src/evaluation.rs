//! Factuality (strict/lenient precision, recall, F1), relevance against the
//! essential sentences, and the overall pipeline score.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::corpus::{build_query, CaseStudy, QueryMode, Variant};
use crate::embedding::{cosine, embed, EmbedInput, EmbeddingError, EmbeddingProvider};
use crate::truncation::TruncationResult;

pub use crate::text::{bleu, rouge_l, sari};

#[derive(Clone, Debug, PartialEq)]
pub enum EvaluationError {
    Unlabeled(String),
    NoEssential(String),
    Embedding(EmbeddingError),
    External(String),
}

impl fmt::Display for EvaluationError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EvaluationError::Unlabeled(id) => write!(f, "case {id:?} has unlabeled sentences"),
            EvaluationError::NoEssential(id) => write!(f, "case {id:?} has no essential sentences"),
            EvaluationError::Embedding(e) => write!(f, "{e}"),
            EvaluationError::External(msg) => write!(f, "external scorer failed: {msg}"),
        }
    }
}

impl core::error::Error for EvaluationError {}

impl From<EmbeddingError> for EvaluationError {
    fn from(e: EmbeddingError) -> Self {
        EvaluationError::Embedding(e)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Precision, recall and F1 of `cited` against `gold`. `None` when `gold`
/// is empty, since recall is undefined.
pub fn prf(cited: &BTreeSet<u32>, gold: &BTreeSet<u32>) -> Option<Prf> {
    if gold.is_empty() {
        return None;
    }
    let hits = cited.intersection(gold).count() as f64;
    let precision = if cited.is_empty() {
        0.0
    } else {
        hits / cited.len() as f64
    };
    let recall = hits / gold.len() as f64;
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Some(Prf { precision, recall, f1 })
}

fn macro_average(items: impl Iterator<Item = Prf>) -> Prf {
    let (mut p, mut r, mut f, mut n) = (0.0, 0.0, 0.0, 0usize);
    for x in items {
        p += x.precision;
        r += x.recall;
        f += x.f1;
        n += 1;
    }
    if n == 0 {
        return Prf::default();
    }
    let n = n as f64;
    Prf {
        precision: p / n,
        recall: r / n,
        f1: f / n,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseFactuality {
    pub case_id: String,
    /// `None` when the case has no gold sentences for the variant.
    pub strict: Option<Prf>,
    pub lenient: Option<Prf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactualityReport {
    pub strict: Prf,
    pub lenient: Prf,
    pub per_case: Vec<CaseFactuality>,
    /// Cases left out of a variant's average for lack of gold sentences.
    pub skipped_strict: Vec<String>,
    pub skipped_lenient: Vec<String>,
}

impl FactualityReport {
    pub fn variant(&self, variant: Variant) -> Prf {
        match variant {
            Variant::Strict => self.strict,
            Variant::Lenient => self.lenient,
        }
    }
}

/// Macro-averaged factuality of per-case cited ids. Cases absent from
/// `cited` count as citing nothing.
pub fn factuality<'c>(
    cases: impl IntoIterator<Item = &'c CaseStudy>,
    cited: &BTreeMap<String, BTreeSet<u32>>,
) -> Result<FactualityReport, EvaluationError> {
    let empty = BTreeSet::new();
    let mut per_case = Vec::new();
    let mut skipped_strict = Vec::new();
    let mut skipped_lenient = Vec::new();
    for case in cases {
        if !case.is_labeled() {
            return Err(EvaluationError::Unlabeled(case.case_id.clone()));
        }
        let ids = cited.get(&case.case_id).unwrap_or(&empty);
        let strict = prf(ids, &case.gold(Variant::Strict));
        let lenient = prf(ids, &case.gold(Variant::Lenient));
        if strict.is_none() {
            skipped_strict.push(case.case_id.clone());
        }
        if lenient.is_none() {
            skipped_lenient.push(case.case_id.clone());
        }
        per_case.push(CaseFactuality {
            case_id: case.case_id.clone(),
            strict,
            lenient,
        });
    }
    Ok(FactualityReport {
        strict: macro_average(per_case.iter().filter_map(|c| c.strict)),
        lenient: macro_average(per_case.iter().filter_map(|c| c.lenient)),
        per_case,
        skipped_strict,
        skipped_lenient,
    })
}

/// Retrieval-only factuality: kept sentences stand in for citations.
pub fn retrieval_eval(
    cases: &[CaseStudy],
    truncations: &BTreeMap<String, TruncationResult>,
) -> Result<FactualityReport, EvaluationError> {
    let kept = truncations
        .iter()
        .map(|(id, t)| (id.clone(), t.kept_ids.iter().copied().collect()))
        .collect();
    factuality(cases, &kept)
}

/// Scores a candidate answer against a reference with an external model.
pub trait ExternalScorer: Send + Sync {
    fn name(&self) -> &str;
    fn score(&self, candidate: &str, reference: &str) -> Result<f64, String>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelevanceReport {
    pub bleu: f64,
    pub rouge: f64,
    pub sari: f64,
    pub semantic: f64,
    /// Mean of the four metrics above.
    pub mean: f64,
    /// Optional external metrics; not part of `mean`.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub external: BTreeMap<String, f64>,
}

impl RelevanceReport {
    fn from_components(bleu: f64, rouge: f64, sari: f64, semantic: f64) -> Self {
        RelevanceReport {
            bleu,
            rouge,
            sari,
            semantic,
            mean: (bleu + rouge + sari + semantic) / 4.0,
            external: BTreeMap::new(),
        }
    }

    /// Component-wise mean over cases.
    pub fn average(reports: &[RelevanceReport]) -> RelevanceReport {
        if reports.is_empty() {
            return RelevanceReport::from_components(0.0, 0.0, 0.0, 0.0);
        }
        let n = reports.len() as f64;
        let avg = |f: fn(&RelevanceReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
        let mut out = RelevanceReport::from_components(
            avg(|r| r.bleu),
            avg(|r| r.rouge),
            avg(|r| r.sari),
            avg(|r| r.semantic),
        );
        let mut ext: BTreeMap<String, (f64, usize)> = BTreeMap::new();
        for r in reports {
            for (k, v) in &r.external {
                let e = ext.entry(k.clone()).or_insert((0.0, 0));
                e.0 += v;
                e.1 += 1;
            }
        }
        out.external = ext.into_iter().map(|(k, (s, c))| (k, s / c as f64)).collect();
        out
    }

    /// Mean including any external metrics.
    pub fn mean_with_external(&self) -> f64 {
        let total = self.bleu + self.rouge + self.sari + self.semantic + self.external.values().sum::<f64>();
        total / (4 + self.external.len()) as f64
    }
}

/// Essential sentences in id order, joined by single spaces.
pub fn relevance_reference(case: &CaseStudy) -> Result<String, EvaluationError> {
    let parts: Vec<&str> = case.essential_sentences().map(|s| s.text.trim()).collect();
    if parts.is_empty() {
        return Err(EvaluationError::NoEssential(case.case_id.clone()));
    }
    Ok(parts.join(" "))
}

pub fn relevance(
    answer_text: &str,
    case: &CaseStudy,
    provider: &dyn EmbeddingProvider,
) -> Result<RelevanceReport, EvaluationError> {
    relevance_with(answer_text, case, provider, &[])
}

pub fn relevance_with(
    answer_text: &str,
    case: &CaseStudy,
    provider: &dyn EmbeddingProvider,
    external: &[&dyn ExternalScorer],
) -> Result<RelevanceReport, EvaluationError> {
    let reference = relevance_reference(case)?;
    let source = build_query(case, QueryMode::Both);
    let semantic = if answer_text.trim().is_empty() {
        0.0
    } else {
        let a = embed(provider, EmbedInput::Text(answer_text))?;
        let b = embed(provider, EmbedInput::Text(&reference))?;
        cosine(&a, &b)?.max(0.0)
    };
    let mut report = RelevanceReport::from_components(
        bleu(answer_text, &[&reference]),
        rouge_l(answer_text, &reference),
        sari(&source, answer_text, &[&reference]),
        semantic,
    );
    for scorer in external {
        let v = scorer
            .score(answer_text, &reference)
            .map_err(EvaluationError::External)?;
        report.external.insert(scorer.name().into(), v);
    }
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineScore {
    pub factuality: FactualityReport,
    pub relevance: RelevanceReport,
    /// Mean of strict F1 and the relevance mean.
    pub overall: f64,
}

pub fn overall(strict_f1: f64, relevance_mean: f64) -> f64 {
    (strict_f1 + relevance_mean) / 2.0
}

pub fn overall_score(factuality: FactualityReport, relevance: RelevanceReport) -> PipelineScore {
    let overall = overall(factuality.strict.f1, relevance.mean);
    PipelineScore {
        factuality,
        relevance,
        overall,
    }
}
