//! Lexical, fuzzy and semantic similarity between an answer sentence and a
//! note sentence.

use alloc::vec::Vec;

use crate::embedding::{cosine, embed, EmbedInput, EmbeddingError, EmbeddingProvider, Vector};
use crate::text::{bleu, levenshtein, meteor_lite, rouge_l};

use super::SimilarityWeights;

/// Mean of ROUGE-L F1, BLEU and METEOR with `answer` as hypothesis.
pub fn lexical_sim(answer: &str, note: &str) -> f64 {
    (rouge_l(answer, note) + bleu(answer, &[note]) + meteor_lite(answer, note)) / 3.0
}

/// One minus the character edit distance normalized by the longer string.
pub fn fuzzy_sim(a: &str, b: &str) -> f64 {
    let a = a.to_lowercase();
    let b = b.to_lowercase();
    let longest = a.chars().count().max(b.chars().count());
    if longest == 0 {
        return 1.0;
    }
    1.0 - levenshtein(&a, &b) as f64 / longest as f64
}

/// Cosine similarity of embeddings, clamped below at zero.
pub fn semantic_sim(a: &str, b: &str, provider: &dyn EmbeddingProvider) -> Result<f64, EmbeddingError> {
    let va = embed(provider, EmbedInput::Text(a))?;
    let vb = embed(provider, EmbedInput::Text(b))?;
    Ok(cosine(&va, &vb)?.max(0.0))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ComponentScores {
    pub lexical: f64,
    pub fuzzy: f64,
    pub semantic: f64,
}

impl ComponentScores {
    pub fn combine(&self, w: &SimilarityWeights) -> f64 {
        (w.lexical * self.lexical + w.fuzzy * self.fuzzy + w.semantic * self.semantic).clamp(0.0, 1.0)
    }
}

pub fn component_scores(a: &str, b: &str, provider: &dyn EmbeddingProvider) -> Result<ComponentScores, EmbeddingError> {
    Ok(ComponentScores {
        lexical: lexical_sim(a, b),
        fuzzy: fuzzy_sim(a, b),
        semantic: semantic_sim(a, b, provider)?,
    })
}

pub fn combined_score(
    a: &str,
    b: &str,
    weights: &SimilarityWeights,
    provider: &dyn EmbeddingProvider,
) -> Result<f64, EmbeddingError> {
    Ok(component_scores(a, b, provider)?.combine(weights))
}

/// Component scores for every (answer sentence, note sentence) pair, so a
/// weight sweep does not recompute them.
#[derive(Clone, Debug, PartialEq)]
pub struct PairScores {
    pub note_ids: Vec<u32>,
    /// `rows[i][j]` scores answer sentence `i` against note sentence `j`.
    pub rows: Vec<Vec<ComponentScores>>,
}

impl PairScores {
    pub fn compute(
        answer: &[&str],
        notes: &[(u32, &str)],
        provider: &dyn EmbeddingProvider,
    ) -> Result<Self, EmbeddingError> {
        let embed_all = |texts: &mut dyn Iterator<Item = &str>| -> Result<Vec<Vector>, EmbeddingError> {
            texts.map(|t| embed(provider, EmbedInput::Text(t))).collect()
        };
        let a_vecs = embed_all(&mut answer.iter().copied())?;
        let n_vecs = embed_all(&mut notes.iter().map(|(_, t)| *t))?;
        let mut rows = Vec::with_capacity(answer.len());
        for (a, av) in answer.iter().zip(&a_vecs) {
            let mut row = Vec::with_capacity(notes.len());
            for ((_, n), nv) in notes.iter().zip(&n_vecs) {
                row.push(ComponentScores {
                    lexical: lexical_sim(a, n),
                    fuzzy: fuzzy_sim(a, n),
                    semantic: cosine(av, nv)?.max(0.0),
                });
            }
            rows.push(row);
        }
        Ok(PairScores {
            note_ids: notes.iter().map(|(id, _)| *id).collect(),
            rows,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::HashingEmbedder;
    use proptest::prelude::*;

    #[test]
    fn fuzzy_examples() {
        assert!((fuzzy_sim("kitten", "sitting") - 0.5714285714285714).abs() < 1e-12);
        assert_eq!(fuzzy_sim("", ""), 1.0);
        assert_eq!(fuzzy_sim("ABC", "abc"), 1.0);
    }

    #[test]
    fn lexical_frozen_value() {
        assert!((lexical_sim("the cat sat", "the cat") - 0.8129900001166638).abs() < 1e-12);
        assert_eq!(lexical_sim("alpha beta", "gamma delta"), 0.0);
    }

    #[test]
    fn weights_select_components() {
        let p = HashingEmbedder::new(64);
        let c = component_scores("the cat sat", "the cat", &p).unwrap();
        let only = |l, f, s| SimilarityWeights::new(l, f, s).unwrap();
        assert_eq!(c.combine(&only(1.0, 0.0, 0.0)), c.lexical);
        assert_eq!(c.combine(&only(0.0, 1.0, 0.0)), c.fuzzy);
        assert_eq!(c.combine(&only(0.0, 0.0, 1.0)), c.semantic);
    }

    proptest! {
        #[test]
        fn identical_sentences_score_one(
            s in "[a-z]{1,6}( [a-z]{1,6}){0,6}",
            (i, j) in (0usize..=10).prop_flat_map(|i| (Just(i), 0..=10 - i)),
        ) {
            let w = SimilarityWeights::new(i as f64 / 10.0, j as f64 / 10.0, (10 - i - j) as f64 / 10.0).unwrap();
            let p = HashingEmbedder::new(64);
            let score = combined_score(&s, &s, &w, &p).unwrap();
            prop_assert!((score - 1.0).abs() < 1e-9, "{}", score);
        }

        #[test]
        fn scores_are_bounded(a in "[a-z ]{1,30}", b in "[a-z ]{1,30}") {
            prop_assume!(!a.trim().is_empty() && !b.trim().is_empty());
            let p = HashingEmbedder::new(64);
            let c = component_scores(&a, &b, &p).unwrap();
            for v in [c.lexical, c.fuzzy, c.semantic] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }
    }
}
