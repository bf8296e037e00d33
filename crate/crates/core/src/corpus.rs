//! Case studies, relevance labels, query formulation and dataset statistics.

use alloc::collections::BTreeSet;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Gold relevance of one note sentence.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RelevanceLabel {
    Essential,
    Supplementary,
    NotRelevant,
    Unlabeled,
}

impl RelevanceLabel {
    /// Wire name, or `None` for an unlabeled sentence.
    pub fn as_str(self) -> Option<&'static str> {
        match self {
            RelevanceLabel::Essential => Some("essential"),
            RelevanceLabel::Supplementary => Some("supplementary"),
            RelevanceLabel::NotRelevant => Some("not-relevant"),
            RelevanceLabel::Unlabeled => None,
        }
    }

    pub fn parse(raw: Option<&str>) -> Option<Self> {
        match raw {
            None => Some(RelevanceLabel::Unlabeled),
            Some("essential") => Some(RelevanceLabel::Essential),
            Some("supplementary") => Some(RelevanceLabel::Supplementary),
            Some("not-relevant") => Some(RelevanceLabel::NotRelevant),
            Some(_) => None,
        }
    }
}

impl Serialize for RelevanceLabel {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self.as_str() {
            Some(name) => serializer.serialize_some(name),
            None => serializer.serialize_none(),
        }
    }
}

impl<'de> Deserialize<'de> for RelevanceLabel {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw: Option<String> = Option::deserialize(deserializer)?;
        RelevanceLabel::parse(raw.as_deref()).ok_or_else(|| {
            serde::de::Error::custom(alloc::format!(
                "unknown label {:?}",
                raw.unwrap_or_default()
            ))
        })
    }
}

/// Dataset split. Only test files may carry unlabeled sentences.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Dev,
    Test,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoteSentence {
    /// 1-based, as printed in the note.
    pub id: u32,
    pub text: String,
    pub label: RelevanceLabel,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseStudy {
    pub case_id: String,
    pub patient_question: String,
    pub clinician_question: String,
    pub sentences: Vec<NoteSentence>,
}

/// Gold set selection for factuality scoring.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Essential sentences only.
    Strict,
    /// Essential and supplementary sentences.
    Lenient,
}

impl CaseStudy {
    pub fn sentence(&self, id: u32) -> Option<&NoteSentence> {
        // ids are contiguous from 1 after validation
        let idx = usize::try_from(id).ok()?.checked_sub(1)?;
        self.sentences.get(idx).filter(|s| s.id == id)
    }

    pub fn sentence_ids(&self) -> BTreeSet<u32> {
        self.sentences.iter().map(|s| s.id).collect()
    }

    pub fn is_labeled(&self) -> bool {
        self.sentences
            .iter()
            .all(|s| s.label != RelevanceLabel::Unlabeled)
    }

    pub fn gold(&self, variant: Variant) -> BTreeSet<u32> {
        self.sentences
            .iter()
            .filter(|s| match variant {
                Variant::Strict => s.label == RelevanceLabel::Essential,
                Variant::Lenient => matches!(
                    s.label,
                    RelevanceLabel::Essential | RelevanceLabel::Supplementary
                ),
            })
            .map(|s| s.id)
            .collect()
    }

    /// Essential sentences in id order.
    pub fn essential_sentences(&self) -> impl Iterator<Item = &NoteSentence> {
        self.sentences
            .iter()
            .filter(|s| s.label == RelevanceLabel::Essential)
    }

    pub fn validate(&self, split: Split, case_index: usize) -> Result<(), CorpusError> {
        let here = |kind| CorpusError::Invalid {
            case_id: self.case_id.clone(),
            case_index,
            sentence_index: None,
            kind,
        };
        if self.case_id.trim().is_empty() {
            return Err(here(InvalidKind::EmptyCaseId));
        }
        if self.patient_question.trim().is_empty() {
            return Err(here(InvalidKind::EmptyQuestion("patient_question")));
        }
        if self.clinician_question.trim().is_empty() {
            return Err(here(InvalidKind::EmptyQuestion("clinician_question")));
        }
        if self.sentences.is_empty() {
            return Err(here(InvalidKind::NoSentences));
        }
        for (pos, sentence) in self.sentences.iter().enumerate() {
            let at = |kind| CorpusError::Invalid {
                case_id: self.case_id.clone(),
                case_index,
                sentence_index: Some(pos),
                kind,
            };
            let expected = pos as u64 + 1;
            if u64::from(sentence.id) != expected {
                return Err(at(InvalidKind::NonContiguousIds {
                    expected,
                    found: i64::from(sentence.id),
                }));
            }
            if sentence.text.trim().is_empty() {
                return Err(at(InvalidKind::EmptyText));
            }
            if split == Split::Dev && sentence.label == RelevanceLabel::Unlabeled {
                return Err(at(InvalidKind::MissingLabel));
            }
        }
        Ok(())
    }
}

/// A validated collection of cases.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawDataset")]
pub struct Dataset {
    pub split: Split,
    pub cases: Vec<CaseStudy>,
}

impl Dataset {
    pub fn new(split: Split, cases: Vec<CaseStudy>) -> Result<Self, CorpusError> {
        let mut seen = BTreeSet::new();
        for (idx, case) in cases.iter().enumerate() {
            if !seen.insert(case.case_id.as_str()) {
                return Err(CorpusError::Invalid {
                    case_id: case.case_id.clone(),
                    case_index: idx,
                    sentence_index: None,
                    kind: InvalidKind::DuplicateCaseId,
                });
            }
            case.validate(split, idx)?;
        }
        Ok(Dataset { split, cases })
    }

    pub fn case(&self, case_id: &str) -> Option<&CaseStudy> {
        self.cases.iter().find(|c| c.case_id == case_id)
    }

    pub fn sentence_text(&self, case_id: &str, sentence_id: u32) -> Option<&str> {
        self.case(case_id)?
            .sentence(sentence_id)
            .map(|s| s.text.as_str())
    }
}

/// Unvalidated wire form of the dataset file. Labels and ids are kept loose
/// so that errors can name the offending case and position.
#[derive(Clone, Debug, Deserialize)]
pub struct RawDataset {
    pub split: Split,
    pub cases: Vec<RawCase>,
}

#[derive(Clone, Debug, Deserialize)]
pub struct RawCase {
    pub case_id: String,
    pub patient_question: String,
    pub clinician_question: String,
    pub sentences: Vec<RawSentence>,
}

#[derive(Clone, Debug, Deserialize)]
pub struct RawSentence {
    pub id: i64,
    pub text: String,
    #[serde(default)]
    pub label: Option<String>,
}

impl TryFrom<RawDataset> for Dataset {
    type Error = CorpusError;

    fn try_from(raw: RawDataset) -> Result<Self, Self::Error> {
        let mut cases = Vec::with_capacity(raw.cases.len());
        for (case_index, rc) in raw.cases.into_iter().enumerate() {
            let mut sentences = Vec::with_capacity(rc.sentences.len());
            for (pos, rs) in rc.sentences.into_iter().enumerate() {
                let at = |kind| CorpusError::Invalid {
                    case_id: rc.case_id.clone(),
                    case_index,
                    sentence_index: Some(pos),
                    kind,
                };
                let label = RelevanceLabel::parse(rs.label.as_deref()).ok_or_else(|| {
                    at(InvalidKind::UnknownLabel(rs.label.clone().unwrap_or_default()))
                })?;
                let id = u32::try_from(rs.id)
                    .ok()
                    .filter(|&id| u64::from(id) == pos as u64 + 1)
                    .ok_or_else(|| {
                        at(InvalidKind::NonContiguousIds {
                            expected: pos as u64 + 1,
                            found: rs.id,
                        })
                    })?;
                sentences.push(NoteSentence {
                    id,
                    text: rs.text,
                    label,
                });
            }
            cases.push(CaseStudy {
                case_id: rc.case_id,
                patient_question: rc.patient_question,
                clinician_question: rc.clinician_question,
                sentences,
            });
        }
        Dataset::new(raw.split, cases)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum InvalidKind {
    DuplicateCaseId,
    EmptyCaseId,
    EmptyQuestion(&'static str),
    NoSentences,
    NonContiguousIds { expected: u64, found: i64 },
    EmptyText,
    UnknownLabel(String),
    MissingLabel,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum CorpusError {
    Invalid {
        case_id: String,
        case_index: usize,
        sentence_index: Option<usize>,
        kind: InvalidKind,
    },
    EmptyCorpus,
}

impl fmt::Display for InvalidKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InvalidKind::DuplicateCaseId => f.write_str("duplicate case_id"),
            InvalidKind::EmptyCaseId => f.write_str("empty case_id"),
            InvalidKind::EmptyQuestion(field) => write!(f, "empty {field}"),
            InvalidKind::NoSentences => f.write_str("case has no sentences"),
            InvalidKind::NonContiguousIds { expected, found } => {
                write!(f, "non-contiguous sentence ids (expected {expected}, found {found})")
            }
            InvalidKind::EmptyText => f.write_str("empty sentence text"),
            InvalidKind::UnknownLabel(label) => write!(f, "unknown label {label:?}"),
            InvalidKind::MissingLabel => f.write_str("unlabeled sentence in a dev split"),
        }
    }
}

impl fmt::Display for CorpusError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CorpusError::Invalid {
                case_id,
                case_index,
                sentence_index,
                kind,
            } => {
                write!(f, "case {case_id:?} (#{case_index}")?;
                if let Some(pos) = sentence_index {
                    write!(f, ", sentence #{pos}")?;
                }
                write!(f, "): {kind}")
            }
            CorpusError::EmptyCorpus => f.write_str("no cases"),
        }
    }
}

impl core::error::Error for CorpusError {}

/// Which question text(s) form the retrieval query.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QueryMode {
    PatientOnly,
    ClinicianOnly,
    #[default]
    Both,
}

impl QueryMode {
    pub const ALL: [QueryMode; 3] = [QueryMode::PatientOnly, QueryMode::ClinicianOnly, QueryMode::Both];

    pub fn name(self) -> &'static str {
        match self {
            QueryMode::PatientOnly => "patient",
            QueryMode::ClinicianOnly => "clinician",
            QueryMode::Both => "both",
        }
    }
}

impl core::str::FromStr for QueryMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "patient" | "patient-only" => Ok(QueryMode::PatientOnly),
            "clinician" | "clinician-only" => Ok(QueryMode::ClinicianOnly),
            "both" => Ok(QueryMode::Both),
            other => Err(alloc::format!("unknown query mode {other:?}")),
        }
    }
}

pub fn build_query(case: &CaseStudy, mode: QueryMode) -> String {
    match mode {
        QueryMode::PatientOnly => case.patient_question.clone(),
        QueryMode::ClinicianOnly => case.clinician_question.clone(),
        QueryMode::Both => {
            let mut q = String::with_capacity(
                case.patient_question.len() + case.clinician_question.len() + 1,
            );
            q.push_str(&case.patient_question);
            q.push('\n');
            q.push_str(&case.clinician_question);
            q
        }
    }
}

/// Five-number summary plus mean. Quartiles use linear interpolation
/// between order statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub count: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub mean: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Option<Summary> {
        if values.is_empty() {
            return None;
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let mean = sorted.iter().sum::<f64>() / sorted.len() as f64;
        Some(Summary {
            count: sorted.len(),
            min: sorted[0],
            q1: quantile_sorted(&sorted, 0.25),
            median: quantile_sorted(&sorted, 0.5),
            q3: quantile_sorted(&sorted, 0.75),
            max: sorted[sorted.len() - 1],
            mean,
        })
    }
}

/// Linear-interpolation quantile of an ascending, non-empty slice.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = (sorted.len() - 1) as f64 * q;
    let lo = libm::floor(pos) as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseCount {
    pub case_id: String,
    pub sentences: usize,
    pub tokens: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub per_case: Vec<CaseCount>,
    /// Distribution of sentences per case.
    pub sentence_counts: Summary,
    /// Distribution of whitespace tokens per sentence, pooled over cases.
    pub sentence_lengths: Summary,
}

pub fn corpus_stats(cases: &[CaseStudy]) -> Result<StatsReport, CorpusError> {
    let mut per_case = Vec::with_capacity(cases.len());
    let mut lengths = Vec::new();
    for case in cases {
        let mut tokens = 0;
        for s in &case.sentences {
            let n = s.text.split_whitespace().count();
            tokens += n;
            lengths.push(n as f64);
        }
        per_case.push(CaseCount {
            case_id: case.case_id.to_string(),
            sentences: case.sentences.len(),
            tokens,
        });
    }
    let counts: Vec<f64> = per_case.iter().map(|c| c.sentences as f64).collect();
    let sentence_counts = Summary::of(&counts).ok_or(CorpusError::EmptyCorpus)?;
    let sentence_lengths = Summary::of(&lengths).ok_or(CorpusError::EmptyCorpus)?;
    Ok(StatsReport {
        per_case,
        sentence_counts,
        sentence_lengths,
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use alloc::format;
    use alloc::vec;

    pub(crate) fn case_with(id: &str, texts: &[(&str, RelevanceLabel)]) -> CaseStudy {
        CaseStudy {
            case_id: id.into(),
            patient_question: "What happened to my father?".into(),
            clinician_question: "Why was surgery performed?".into(),
            sentences: texts
                .iter()
                .enumerate()
                .map(|(i, (t, l))| NoteSentence {
                    id: i as u32 + 1,
                    text: (*t).into(),
                    label: *l,
                })
                .collect(),
        }
    }

    fn n_sentences(id: &str, n: usize) -> CaseStudy {
        let texts: Vec<String> = (0..n).map(|i| format!("sentence number {i} here")).collect();
        let pairs: Vec<(&str, RelevanceLabel)> = texts
            .iter()
            .map(|t| (t.as_str(), RelevanceLabel::NotRelevant))
            .collect();
        case_with(id, &pairs)
    }

    #[test]
    fn query_modes() {
        let mut case = n_sentences("c", 1);
        case.clinician_question = "Why did they perform the emergency salvage repair on him?".into();
        assert_eq!(
            build_query(&case, QueryMode::ClinicianOnly),
            "Why did they perform the emergency salvage repair on him?"
        );
        assert_eq!(build_query(&case, QueryMode::PatientOnly), case.patient_question);
        assert_eq!(
            build_query(&case, QueryMode::Both),
            format!("{}\n{}", case.patient_question, case.clinician_question)
        );
        case.clinician_question = case.patient_question.clone();
        let both = build_query(&case, QueryMode::Both);
        assert_eq!(both.matches(case.patient_question.as_str()).count(), 2);
        assert_eq!(QueryMode::default(), QueryMode::Both);
    }

    #[test]
    fn stats_summaries() {
        let report = corpus_stats(&[n_sentences("a", 9)]).unwrap();
        let s = &report.sentence_counts;
        assert_eq!((s.min, s.max, s.mean), (9.0, 9.0, 9.0));

        let report = corpus_stats(&[n_sentences("a", 4), n_sentences("b", 10)]).unwrap();
        assert_eq!(report.sentence_counts.mean, 7.0);
        assert_eq!(report.sentence_counts.median, 7.0);
        assert_eq!(report.sentence_lengths.mean, 4.0);

        let report = corpus_stats(&[n_sentences("a", 3), n_sentences("b", 54), n_sentences("c", 12)]).unwrap();
        assert_eq!(report.sentence_counts.max, 54.0);
        assert_eq!(report.per_case[1].sentences, 54);

        assert_eq!(corpus_stats(&[]), Err(CorpusError::EmptyCorpus));
    }

    #[test]
    fn quartiles_interpolate() {
        // numpy.percentile([1,2,3,4,5,6,7,8], [25,50,75]) == [2.75, 4.5, 6.25]
        let s = Summary::of(&[8.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0]).unwrap();
        assert_eq!((s.q1, s.median, s.q3), (2.75, 4.5, 6.25));
    }

    #[test]
    fn validation_errors_name_the_case() {
        let mut case = n_sentences("broken", 3);
        case.sentences[1].id = 3;
        let err = Dataset::new(Split::Dev, vec![case]).unwrap_err();
        let msg = format!("{err}");
        assert!(msg.contains("broken") && msg.contains("non-contiguous sentence ids"), "{msg}");

        let err = Dataset::new(Split::Dev, vec![n_sentences("x", 1), n_sentences("x", 2)]).unwrap_err();
        assert!(format!("{err}").contains("duplicate case_id"));

        let unlabeled = case_with("u", &[("text", RelevanceLabel::Unlabeled)]);
        assert!(Dataset::new(Split::Dev, vec![unlabeled.clone()]).is_err());
        assert!(Dataset::new(Split::Test, vec![unlabeled]).is_ok());

        let empty = CaseStudy {
            sentences: vec![],
            ..n_sentences("e", 1)
        };
        assert!(Dataset::new(Split::Test, vec![empty]).is_err());
        assert!(Dataset::new(Split::Dev, vec![]).unwrap().cases.is_empty());
    }

    #[test]
    fn lookup_by_case_and_sentence() {
        let ds = Dataset::new(Split::Dev, vec![n_sentences("a", 3), n_sentences("b", 2)]).unwrap();
        assert_eq!(ds.sentence_text("b", 2), Some("sentence number 1 here"));
        assert_eq!(ds.sentence_text("b", 3), None);
        assert_eq!(ds.sentence_text("z", 1), None);
        assert_eq!(ds.case("a").unwrap().sentence(0), None);
    }

    #[test]
    fn gold_sets() {
        let case = case_with(
            "g",
            &[
                ("a", RelevanceLabel::Essential),
                ("b", RelevanceLabel::Supplementary),
                ("c", RelevanceLabel::NotRelevant),
                ("d", RelevanceLabel::Essential),
            ],
        );
        assert_eq!(case.gold(Variant::Strict), [1, 4].into_iter().collect());
        assert_eq!(case.gold(Variant::Lenient), [1, 2, 4].into_iter().collect());
    }
}
