//! Tokenization and the n-gram text metrics shared by attribution and
//! evaluation: BLEU, ROUGE-L, METEOR-lite, SARI and Levenshtein distance.
//!
//! All metrics tokenize with [`tokenize`]: lowercase, split on any
//! non-alphanumeric character.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
        .collect()
}

type Counts<'a> = BTreeMap<&'a [String], usize>;

fn ngram_counts(tokens: &[String], n: usize) -> Counts<'_> {
    let mut counts = BTreeMap::new();
    if n > 0 && tokens.len() >= n {
        for gram in tokens.windows(n) {
            *counts.entry(gram).or_insert(0) += 1;
        }
    }
    counts
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

/// Sentence BLEU with up to 4-gram precisions, uniform weights, brevity
/// penalty against the closest reference length, and add-one smoothing on
/// orders 2-4. Zero unigram overlap gives 0.
pub fn bleu(hypothesis: &str, references: &[&str]) -> f64 {
    let hyp = tokenize(hypothesis);
    let refs: Vec<Vec<String>> = references.iter().map(|r| tokenize(r)).collect();
    if hyp.is_empty() || refs.iter().all(|r| r.is_empty()) {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for n in 1..=4 {
        let hyp_counts = ngram_counts(&hyp, n);
        let total: usize = hyp_counts.values().sum();
        let ref_counts: Vec<Counts<'_>> = refs.iter().map(|r| ngram_counts(r, n)).collect();
        let matched: usize = hyp_counts
            .iter()
            .map(|(gram, &c)| {
                let max_ref = ref_counts
                    .iter()
                    .map(|rc| rc.get(gram).copied().unwrap_or(0))
                    .max()
                    .unwrap_or(0);
                c.min(max_ref)
            })
            .sum();
        let precision = if n == 1 {
            if matched == 0 {
                return 0.0;
            }
            matched as f64 / total as f64
        } else {
            (matched as f64 + 1.0) / (total as f64 + 1.0)
        };
        log_sum += libm::log(precision) / 4.0;
    }
    let c = hyp.len();
    // closest reference length, shorter wins ties
    let r = refs
        .iter()
        .map(|r| r.len())
        .min_by_key(|&len| (len.abs_diff(c), len))
        .unwrap_or(0);
    let bp = if c > r {
        1.0
    } else {
        libm::exp(1.0 - r as f64 / c as f64)
    };
    (bp * libm::exp(log_sum)).clamp(0.0, 1.0)
}

fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut row = vec![0usize; b.len() + 1];
    for x in a {
        let mut diag = 0;
        for (j, y) in b.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = if x == y { diag + 1 } else { up.max(row[j]) };
            diag = up;
        }
    }
    row[b.len()]
}

/// ROUGE-L F1 over the token longest common subsequence.
pub fn rouge_l(hypothesis: &str, reference: &str) -> f64 {
    let hyp = tokenize(hypothesis);
    let refr = tokenize(reference);
    if hyp.is_empty() || refr.is_empty() {
        return 0.0;
    }
    let lcs = lcs_len(&hyp, &refr) as f64;
    harmonic(lcs / hyp.len() as f64, lcs / refr.len() as f64)
}

/// Unigram F-mean weighting recall nine times precision; no stemming,
/// synonyms, or fragmentation penalty.
pub fn meteor_lite(hypothesis: &str, reference: &str) -> f64 {
    let hyp = tokenize(hypothesis);
    let refr = tokenize(reference);
    if hyp.is_empty() || refr.is_empty() {
        return 0.0;
    }
    let hc = ngram_counts(&hyp, 1);
    let rc = ngram_counts(&refr, 1);
    let matched: usize = hc
        .iter()
        .map(|(g, &c)| c.min(rc.get(g).copied().unwrap_or(0)))
        .sum();
    if matched == 0 {
        return 0.0;
    }
    let p = matched as f64 / hyp.len() as f64;
    let r = matched as f64 / refr.len() as f64;
    10.0 * p * r / (r + 9.0 * p)
}

/// SARI over orders 1-4: mean of the keep F1, deletion precision and
/// addition F1. Uses the corrected keep recall and defines 0/0 as 1.
pub fn sari(source: &str, hypothesis: &str, references: &[&str]) -> f64 {
    let src = tokenize(source);
    let hyp = tokenize(hypothesis);
    let refs: Vec<Vec<String>> = references.iter().map(|r| tokenize(r)).collect();
    let num_refs = refs.len().max(1);
    let (mut keep, mut del, mut add) = (0.0, 0.0, 0.0);
    for n in 1..=4 {
        let (k, d, a) = sari_order(&src, &hyp, &refs, n, num_refs);
        keep += k;
        del += d;
        add += a;
    }
    ((keep + del + add) / 12.0).clamp(0.0, 1.0)
}

fn sari_order(
    src: &[String],
    hyp: &[String],
    refs: &[Vec<String>],
    n: usize,
    num_refs: usize,
) -> (f64, f64, f64) {
    let mut ref_counts: Counts<'_> = BTreeMap::new();
    for r in refs {
        for (g, c) in ngram_counts(r, n) {
            *ref_counts.entry(g).or_insert(0) += c;
        }
    }
    let src_rep: Counts<'_> = ngram_counts(src, n)
        .into_iter()
        .map(|(g, c)| (g, c * num_refs))
        .collect();
    let hyp_rep: Counts<'_> = ngram_counts(hyp, n)
        .into_iter()
        .map(|(g, c)| (g, c * num_refs))
        .collect();
    let get = |m: &Counts<'_>, g: &[String]| m.get(g).copied().unwrap_or(0);

    // keep: grams in both source and hypothesis
    let mut keep_p_sum = 0.0;
    let mut keep_good_total = 0usize;
    let mut keep_len = 0usize;
    for (&g, &sc) in &src_rep {
        let kept = sc.min(get(&hyp_rep, g));
        if kept == 0 {
            continue;
        }
        keep_len += 1;
        let good = kept.min(get(&ref_counts, g));
        keep_p_sum += good as f64 / kept as f64;
        keep_good_total += good;
    }
    let keep_all_total: usize = src_rep
        .iter()
        .map(|(&g, &sc)| sc.min(get(&ref_counts, g)))
        .sum();
    let keep_all_len = src_rep
        .iter()
        .filter(|(&g, &sc)| sc.min(get(&ref_counts, g)) > 0)
        .count();
    let keep_p = if keep_len > 0 {
        keep_p_sum / keep_len as f64
    } else {
        1.0
    };
    let keep_r = if keep_all_len > 0 {
        keep_good_total as f64 / keep_all_total as f64
    } else {
        1.0
    };
    let keep = harmonic(keep_p, keep_r);

    // deletion: source grams dropped (fully or partly) by the hypothesis
    let mut del_sum = 0.0;
    let mut del_len = 0usize;
    for (&g, &sc) in &src_rep {
        let deleted = sc.saturating_sub(get(&hyp_rep, g));
        if deleted == 0 {
            continue;
        }
        del_len += 1;
        let good = deleted.saturating_sub(get(&ref_counts, g));
        del_sum += good as f64 / deleted as f64;
    }
    let del = if del_len > 0 {
        del_sum / del_len as f64
    } else {
        1.0
    };

    // addition: set semantics
    let src_set: BTreeSet<&[String]> = src_rep.keys().copied().collect();
    let ref_set: BTreeSet<&[String]> = ref_counts.keys().copied().collect();
    let added: BTreeSet<&[String]> = hyp_rep
        .keys()
        .copied()
        .filter(|g| !src_set.contains(g))
        .collect();
    let good_added = added.iter().filter(|g| ref_set.contains(*g)).count();
    let add_all = ref_set.iter().filter(|g| !src_set.contains(*g)).count();
    let add_p = if !added.is_empty() {
        good_added as f64 / added.len() as f64
    } else {
        1.0
    };
    let add_r = if add_all > 0 {
        good_added as f64 / add_all as f64
    } else {
        1.0
    };
    (keep, del, harmonic(add_p, add_r))
}

/// Edit distance over Unicode scalar values.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    if a.is_empty() {
        return b.len();
    }
    let mut row: Vec<usize> = (0..=b.len()).collect();
    for (i, ca) in a.iter().enumerate() {
        let mut diag = row[0];
        row[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = (up + 1).min(row[j] + 1).min(diag + usize::from(ca != cb));
            diag = up;
        }
    }
    row[b.len()]
}
