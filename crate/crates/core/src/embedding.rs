//! Vectors, cosine similarity, the embedding-provider contract, an exact
//! per-case index and full ranking of note sentences against a query.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::corpus::CaseStudy;

/// Default dimensionality of sentence embeddings.
pub const DEFAULT_DIM: usize = 1024;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum EmbeddingError {
    DimensionMismatch { expected: usize, found: usize },
    ZeroVector,
    NonFinite,
    Empty,
    MissingEmbedding(String),
    EmptyText,
    Unavailable(String),
}

impl fmt::Display for EmbeddingError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EmbeddingError::DimensionMismatch { expected, found } => {
                write!(f, "dimension mismatch: expected {expected}, found {found}")
            }
            EmbeddingError::ZeroVector => f.write_str("zero vector"),
            EmbeddingError::NonFinite => f.write_str("vector has NaN or infinite components"),
            EmbeddingError::Empty => f.write_str("empty vector"),
            EmbeddingError::MissingEmbedding(key) => write!(f, "missing embedding for {key:?}"),
            EmbeddingError::EmptyText => f.write_str("cannot embed empty text"),
            EmbeddingError::Unavailable(msg) => write!(f, "embedding provider unavailable: {msg}"),
        }
    }
}

impl core::error::Error for EmbeddingError {}

/// A finite, non-empty embedding. Stored unnormalized.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Vector(Vec<f64>);

impl Vector {
    pub fn new(values: Vec<f64>) -> Result<Self, EmbeddingError> {
        if values.is_empty() {
            return Err(EmbeddingError::Empty);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EmbeddingError::NonFinite);
        }
        Ok(Vector(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn scaled(&self, factor: f64) -> Result<Self, EmbeddingError> {
        Vector::new(self.0.iter().map(|v| v * factor).collect())
    }
}

impl TryFrom<Vec<f64>> for Vector {
    type Error = EmbeddingError;
    fn try_from(values: Vec<f64>) -> Result<Self, Self::Error> {
        Vector::new(values)
    }
}

impl From<Vector> for Vec<f64> {
    fn from(v: Vector) -> Self {
        v.0
    }
}

/// `dot(a, b) / (|a| |b|)`, clamped to `[-1, 1]`.
pub fn cosine(a: &Vector, b: &Vector) -> Result<f64, EmbeddingError> {
    if a.dim() != b.dim() {
        return Err(EmbeddingError::DimensionMismatch {
            expected: a.dim(),
            found: b.dim(),
        });
    }
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.0.iter().zip(&b.0) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(EmbeddingError::ZeroVector);
    }
    Ok((dot / (libm::sqrt(na) * libm::sqrt(nb))).clamp(-1.0, 1.0))
}

/// What to embed. Sentences carry their coordinates so that file-backed
/// stores can key them as `case_id#sentence_id`.
#[derive(Clone, Copy, Debug)]
pub enum EmbedInput<'a> {
    Text(&'a str),
    Sentence {
        case_id: &'a str,
        sentence_id: u32,
        text: &'a str,
    },
}

impl<'a> EmbedInput<'a> {
    pub fn text(&self) -> &'a str {
        match *self {
            EmbedInput::Text(t) => t,
            EmbedInput::Sentence { text, .. } => text,
        }
    }
}

pub fn sentence_key(case_id: &str, sentence_id: u32) -> String {
    alloc::format!("{case_id}#{sentence_id}")
}

/// Source of embeddings. Implementations must be safe to share across
/// worker threads.
pub trait EmbeddingProvider: Send + Sync {
    fn dim(&self) -> usize;

    fn embed_input(&self, input: EmbedInput<'_>) -> Result<Vector, EmbeddingError>;

    fn embed(&self, text: &str) -> Result<Vector, EmbeddingError> {
        self.embed_input(EmbedInput::Text(text))
    }
}

/// Checked provider call: rejects empty text and enforces the provider's
/// declared dimension.
pub fn embed(provider: &dyn EmbeddingProvider, input: EmbedInput<'_>) -> Result<Vector, EmbeddingError> {
    if input.text().trim().is_empty() {
        return Err(EmbeddingError::EmptyText);
    }
    let v = provider.embed_input(input)?;
    if v.dim() != provider.dim() {
        return Err(EmbeddingError::DimensionMismatch {
            expected: provider.dim(),
            found: v.dim(),
        });
    }
    Ok(v)
}

/// Offline provider using feature hashing of lowercase alphanumeric
/// tokens into counts. Deterministic; texts sharing no token are orthogonal
/// unless their tokens collide. Counts are unsigned so a non-empty text
/// never maps to the zero vector; text without tokens is hashed whole.
#[derive(Clone, Debug)]
pub struct HashingEmbedder {
    dim: usize,
}

impl HashingEmbedder {
    pub fn new(dim: usize) -> Self {
        HashingEmbedder { dim: dim.max(1) }
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

impl EmbeddingProvider for HashingEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_input(&self, input: EmbedInput<'_>) -> Result<Vector, EmbeddingError> {
        let mut values = alloc::vec![0.0; self.dim];
        let mut tokens = crate::text::tokenize(input.text());
        if tokens.is_empty() {
            tokens.push(input.text().trim().into());
        }
        for token in tokens {
            let slot = (fnv1a(token.as_bytes()) % self.dim as u64) as usize;
            values[slot] += 1.0;
        }
        Vector::new(values)
    }
}

/// Immutable map from `(case_id, sentence_id)` to vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorIndex {
    dim: usize,
    entries: BTreeMap<(String, u32), Vector>,
}

impl VectorIndex {
    pub fn build<'c>(
        cases: impl IntoIterator<Item = &'c CaseStudy>,
        provider: &dyn EmbeddingProvider,
    ) -> Result<Self, EmbeddingError> {
        let mut entries = BTreeMap::new();
        for case in cases {
            for s in &case.sentences {
                let v = embed(
                    provider,
                    EmbedInput::Sentence {
                        case_id: &case.case_id,
                        sentence_id: s.id,
                        text: &s.text,
                    },
                )?;
                entries.insert((case.case_id.clone(), s.id), v);
            }
        }
        Ok(VectorIndex {
            dim: provider.dim(),
            entries,
        })
    }

    pub fn from_entries(
        dim: usize,
        vectors: impl IntoIterator<Item = ((String, u32), Vector)>,
    ) -> Result<Self, EmbeddingError> {
        let mut entries = BTreeMap::new();
        for (key, v) in vectors {
            if v.dim() != dim {
                return Err(EmbeddingError::DimensionMismatch {
                    expected: dim,
                    found: v.dim(),
                });
            }
            entries.insert(key, v);
        }
        Ok(VectorIndex { dim, entries })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, case_id: &str, sentence_id: u32) -> Option<&Vector> {
        self.entries.get(&(case_id.to_string(), sentence_id))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedEntry {
    pub id: u32,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum RankingError {
    Unsorted { position: usize },
    NonFinite { position: usize },
    DuplicateId(u32),
}

impl fmt::Display for RankingError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RankingError::Unsorted { position } => write!(
                f,
                "ranked list is not sorted by descending score (ties by ascending id) at position {position}"
            ),
            RankingError::NonFinite { position } => {
                write!(f, "non-finite score at position {position}")
            }
            RankingError::DuplicateId(id) => write!(f, "sentence id {id} appears twice"),
        }
    }
}

impl core::error::Error for RankingError {}

/// Sentences of one case by descending score, ties by ascending id.
/// The order is checked on construction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RankedListWire")]
pub struct RankedList {
    case_id: String,
    entries: Vec<RankedEntry>,
}

#[derive(Deserialize)]
struct RankedListWire {
    case_id: String,
    entries: Vec<RankedEntry>,
}

impl TryFrom<RankedListWire> for RankedList {
    type Error = RankingError;
    fn try_from(w: RankedListWire) -> Result<Self, Self::Error> {
        RankedList::new(w.case_id, w.entries)
    }
}

/// Total order used for rankings.
pub fn ranking_order(a: &RankedEntry, b: &RankedEntry) -> core::cmp::Ordering {
    b.score.total_cmp(&a.score).then(a.id.cmp(&b.id))
}

impl RankedList {
    pub fn new(case_id: impl Into<String>, entries: Vec<RankedEntry>) -> Result<Self, RankingError> {
        let mut seen = alloc::collections::BTreeSet::new();
        for (i, e) in entries.iter().enumerate() {
            if !e.score.is_finite() {
                return Err(RankingError::NonFinite { position: i });
            }
            if !seen.insert(e.id) {
                return Err(RankingError::DuplicateId(e.id));
            }
            if i > 0 && ranking_order(&entries[i - 1], e) != core::cmp::Ordering::Less {
                return Err(RankingError::Unsorted { position: i });
            }
        }
        Ok(RankedList {
            case_id: case_id.into(),
            entries,
        })
    }

    /// Sorts arbitrary `(id, score)` pairs into ranking order.
    pub fn from_unsorted(
        case_id: impl Into<String>,
        mut entries: Vec<RankedEntry>,
    ) -> Result<Self, RankingError> {
        if let Some(position) = entries.iter().position(|e| !e.score.is_finite()) {
            return Err(RankingError::NonFinite { position });
        }
        entries.sort_by(ranking_order);
        RankedList::new(case_id, entries)
    }

    /// Convenience for tests and synthetic lists: ids 1..=n in the given
    /// order, which must already be descending.
    pub fn from_scores(case_id: impl Into<String>, scores: &[f64]) -> Result<Self, RankingError> {
        let entries = scores
            .iter()
            .enumerate()
            .map(|(i, &score)| RankedEntry {
                id: i as u32 + 1,
                score,
            })
            .collect();
        RankedList::new(case_id, entries)
    }

    pub fn case_id(&self) -> &str {
        &self.case_id
    }

    pub fn entries(&self) -> &[RankedEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn scores(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.score).collect()
    }

    pub fn ids(&self) -> Vec<u32> {
        self.entries.iter().map(|e| e.id).collect()
    }
}

/// Exhaustive cosine ranking of all sentences of `case`.
pub fn rank_sentences(
    case: &CaseStudy,
    query: &Vector,
    index: &VectorIndex,
) -> Result<RankedList, EmbeddingError> {
    if query.dim() != index.dim() {
        return Err(EmbeddingError::DimensionMismatch {
            expected: index.dim(),
            found: query.dim(),
        });
    }
    let mut entries = Vec::with_capacity(case.sentences.len());
    for s in &case.sentences {
        let v = index
            .get(&case.case_id, s.id)
            .ok_or_else(|| EmbeddingError::MissingEmbedding(sentence_key(&case.case_id, s.id)))?;
        entries.push(RankedEntry {
            id: s.id,
            score: cosine(query, v)?,
        });
    }
    entries.sort_by(ranking_order);
    Ok(RankedList::new(case.case_id.clone(), entries)
        .expect("cosine scores are finite and sorted"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::tests::case_with;
    use crate::corpus::RelevanceLabel::NotRelevant;
    use alloc::vec;
    use proptest::prelude::*;

    fn v(xs: &[f64]) -> Vector {
        Vector::new(xs.to_vec()).unwrap()
    }

    struct Fixed(Vec<(String, Vector)>, usize);

    impl EmbeddingProvider for Fixed {
        fn dim(&self) -> usize {
            self.1
        }
        fn embed_input(&self, input: EmbedInput<'_>) -> Result<Vector, EmbeddingError> {
            let key = match input {
                EmbedInput::Text(t) => t.to_string(),
                EmbedInput::Sentence { case_id, sentence_id, .. } => sentence_key(case_id, sentence_id),
            };
            self.0
                .iter()
                .find(|(k, _)| *k == key)
                .map(|(_, v)| v.clone())
                .ok_or(EmbeddingError::MissingEmbedding(key))
        }
    }

    #[test]
    fn cosine_examples() {
        assert!((cosine(&v(&[0.3, -2.0, 5.0]), &v(&[0.3, -2.0, 5.0])).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(cosine(&v(&[1.0, 0.0]), &v(&[0.0, 1.0])).unwrap(), 0.0);
        assert!((cosine(&v(&[1.0, 1.0]), &v(&[1.0, 0.0])).unwrap() - 0.5f64.sqrt()).abs() < 1e-6);
        assert_eq!(cosine(&v(&[0.0, 0.0]), &v(&[1.0, 0.0])), Err(EmbeddingError::ZeroVector));
        assert!(matches!(
            cosine(&v(&[1.0]), &v(&[1.0, 0.0])),
            Err(EmbeddingError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn vector_rejects_nan() {
        assert_eq!(Vector::new(vec![1.0, f64::NAN]), Err(EmbeddingError::NonFinite));
        assert_eq!(Vector::new(vec![]), Err(EmbeddingError::Empty));
    }

    #[test]
    fn provider_lookup_and_checks() {
        let p = Fixed(vec![("abc".into(), v(&[1.0, 2.0]))], 2);
        assert_eq!(embed(&p, EmbedInput::Text("abc")).unwrap(), v(&[1.0, 2.0]));
        assert!(matches!(
            embed(&p, EmbedInput::Text("zzz")),
            Err(EmbeddingError::MissingEmbedding(_))
        ));
        let wrong = Fixed(vec![("abc".into(), v(&[1.0; 512]))], 1024);
        assert_eq!(
            embed(&wrong, EmbedInput::Text("abc")),
            Err(EmbeddingError::DimensionMismatch { expected: 1024, found: 512 })
        );
        assert_eq!(embed(&p, EmbedInput::Text("  ")), Err(EmbeddingError::EmptyText));
    }

    #[test]
    fn query_equal_to_sentence_ranks_first() {
        let case = case_with("c", &[("a", NotRelevant), ("b", NotRelevant), ("c", NotRelevant)]);
        let vectors = [v(&[1.0, 0.2]), v(&[0.1, 1.0]), v(&[0.7, 0.7])];
        let index = VectorIndex::from_entries(
            2,
            vectors.iter().enumerate().map(|(i, x)| (("c".to_string(), i as u32 + 1), x.clone())),
        )
        .unwrap();
        let ranked = rank_sentences(&case, &vectors[2], &index).unwrap();
        assert_eq!(ranked.entries()[0].id, 3);
        assert!((ranked.entries()[0].score - 1.0).abs() < 1e-12);
    }

    #[test]
    fn identical_vectors_tie_break_by_id() {
        let case = case_with("c", &[("a", NotRelevant), ("b", NotRelevant), ("c", NotRelevant)]);
        let index = VectorIndex::from_entries(
            2,
            (1..=3).map(|i| (("c".to_string(), i), v(&[0.5, 0.5]))),
        )
        .unwrap();
        let ranked = rank_sentences(&case, &v(&[1.0, 0.0]), &index).unwrap();
        assert_eq!(ranked.ids(), vec![1, 2, 3]);
    }

    #[test]
    fn missing_sentence_vector() {
        let case = case_with("c", &[("a", NotRelevant), ("b", NotRelevant)]);
        let index = VectorIndex::from_entries(2, [(("c".to_string(), 1), v(&[1.0, 0.0]))]).unwrap();
        assert_eq!(
            rank_sentences(&case, &v(&[1.0, 0.0]), &index),
            Err(EmbeddingError::MissingEmbedding("c#2".into()))
        );
    }

    #[test]
    fn ranked_list_rejects_unsorted() {
        let bad = vec![RankedEntry { id: 1, score: 0.1 }, RankedEntry { id: 2, score: 0.5 }];
        assert_eq!(RankedList::new("c", bad), Err(RankingError::Unsorted { position: 1 }));
        let tie_wrong = vec![RankedEntry { id: 2, score: 0.5 }, RankedEntry { id: 1, score: 0.5 }];
        assert!(RankedList::new("c", tie_wrong).is_err());
        let dup = vec![RankedEntry { id: 1, score: 0.5 }, RankedEntry { id: 1, score: 0.4 }];
        assert_eq!(RankedList::new("c", dup), Err(RankingError::DuplicateId(1)));
    }

    #[test]
    fn hashing_embedder_is_deterministic() {
        let h = HashingEmbedder::new(64);
        let a = h.embed("The patient was intubated").unwrap();
        assert_eq!(a, h.embed("the PATIENT was intubated.").unwrap());
        assert_eq!(a.dim(), 64);
        assert!((cosine(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn hashing_embedder_never_returns_zero() {
        let h = HashingEmbedder::new(64);
        for text in ["uuyice f", "t esaod", "a", "!!!", "-- ?"] {
            let v = h.embed(text).unwrap();
            assert!(v.values().iter().any(|&x| x != 0.0), "{text:?}");
        }
    }

    fn arb_vec(dim: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(-1.0f64..1.0, dim)
            .prop_filter("non-zero", |xs| xs.iter().any(|x| x.abs() > 1e-3))
    }

    proptest! {
        #[test]
        fn cosine_scale_invariant(a in arb_vec(6), b in arb_vec(6), alpha in 0.01f64..100.0) {
            let (a, b) = (v(&a), v(&b));
            let c1 = cosine(&a, &b).unwrap();
            let c2 = cosine(&a.scaled(alpha).unwrap(), &b).unwrap();
            prop_assert!((c1 - c2).abs() < 1e-9);
            prop_assert!((-1.0..=1.0).contains(&c1));
        }

        #[test]
        fn ranking_matches_brute_force(vectors in proptest::collection::vec(arb_vec(4), 5), q in arb_vec(4)) {
            let labels: Vec<(&str, _)> = (0..5).map(|_| ("s", NotRelevant)).collect();
            let case = case_with("c", &labels);
            let index = VectorIndex::from_entries(
                4,
                vectors.iter().enumerate().map(|(i, x)| (("c".to_string(), i as u32 + 1), v(x))),
            ).unwrap();
            let q = v(&q);
            let ranked = rank_sentences(&case, &q, &index).unwrap();

            // brute force: selection by repeatedly taking the best remaining
            let mut remaining: Vec<(u32, f64)> = vectors.iter().enumerate().map(|(i, x)| {
                let dot: f64 = x.iter().zip(q.values()).map(|(a, b)| a * b).sum();
                let na: f64 = x.iter().map(|a| a * a).sum::<f64>().sqrt();
                let nb: f64 = q.values().iter().map(|a| a * a).sum::<f64>().sqrt();
                (i as u32 + 1, dot / (na * nb))
            }).collect();
            let mut expected = Vec::new();
            while !remaining.is_empty() {
                let mut best = 0;
                for j in 1..remaining.len() {
                    if remaining[j].1 > remaining[best].1 + 1e-12 {
                        best = j;
                    }
                }
                expected.push(remaining.remove(best).0);
            }
            prop_assert_eq!(ranked.ids(), expected);
        }
    }
}
