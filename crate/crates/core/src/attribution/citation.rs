//! Inline citation blocks: `Sentence text |1, 3|.` or `Sentence text. |1, 3|`.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;

use super::{Answer, AttributionError, Citation};

fn is_terminator(c: char) -> bool {
    matches!(c, '.' | '!' | '?')
}

/// Collapses whitespace runs, trims, and drops a space left in front of the
/// closing terminators once a citation block is removed.
fn normalize(raw: &str) -> String {
    let mut out = String::with_capacity(raw.len());
    for word in raw.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(word);
    }
    let trimmed = out.trim_end_matches(is_terminator);
    if trimmed.len() < out.len() && trimmed.ends_with(' ') {
        let tail = String::from(&out[trimmed.len()..]);
        out.truncate(trimmed.len() - 1);
        out.push_str(&tail);
    }
    out
}

fn parse_block(content: &str, offset: usize) -> Result<Vec<u32>, AttributionError> {
    let mut ids = Vec::new();
    for part in content.split(',') {
        let part = part.trim();
        if part.is_empty() || !part.bytes().all(|b| b.is_ascii_digit()) {
            return Err(AttributionError::MalformedBlock { offset });
        }
        ids.push(part.parse().map_err(|_| AttributionError::MalformedBlock { offset })?);
    }
    Ok(ids)
}

struct Parsed {
    sentences: Vec<String>,
    ids: Vec<BTreeSet<u32>>,
}

fn split(raw: &str) -> Result<Parsed, AttributionError> {
    let mut out = Parsed {
        sentences: Vec::new(),
        ids: Vec::new(),
    };
    let mut buf = String::new();
    let mut pending: BTreeSet<u32> = BTreeSet::new();
    let mut i = 0;
    while i < raw.len() {
        let c = raw[i..].chars().next().unwrap();
        if c == '|' {
            let Some(close) = raw[i + 1..].find('|') else {
                return Err(AttributionError::Unbalanced { offset: i });
            };
            let ids = parse_block(&raw[i + 1..i + 1 + close], i)?;
            if buf.trim().is_empty() && !out.sentences.is_empty() {
                out.ids.last_mut().unwrap().extend(ids);
            } else {
                pending.extend(ids);
            }
            i += close + 2;
            continue;
        }
        buf.push(c);
        i += c.len_utf8();
        if is_terminator(c) {
            while let Some(t) = raw[i..].chars().next().filter(|&t| is_terminator(t)) {
                buf.push(t);
                i += t.len_utf8();
            }
            let next = raw[i..].chars().next();
            if next.is_none_or(|n| n.is_whitespace() || n == '|') {
                let text = normalize(&buf);
                if !text.is_empty() {
                    out.sentences.push(text);
                    out.ids.push(core::mem::take(&mut pending));
                }
                buf.clear();
            }
        }
    }
    let text = normalize(&buf);
    if !text.is_empty() {
        out.sentences.push(text);
        out.ids.push(pending);
    }
    Ok(out)
}

/// Splits uncited text into sentences with the same rules the citation
/// parser uses.
pub fn split_sentences(raw: &str) -> Result<Vec<String>, AttributionError> {
    Ok(split(raw)?.sentences)
}

/// Parses an answer with inline citation blocks. Ids not in `valid_ids` are
/// dropped; an answer left without any citation is rejected.
pub fn parse_citations(raw: &str, valid_ids: &BTreeSet<u32>) -> Result<Answer, AttributionError> {
    let parsed = split(raw)?;
    let citations: Vec<Citation> = parsed
        .ids
        .into_iter()
        .enumerate()
        .filter_map(|(sentence, ids)| {
            let ids: BTreeSet<u32> = ids.intersection(valid_ids).copied().collect();
            (!ids.is_empty()).then_some(Citation { sentence, ids })
        })
        .collect();
    if citations.is_empty() {
        return Err(AttributionError::NoValidAttribution);
    }
    Ok(Answer {
        sentences: parsed.sentences,
        citations,
    })
}

/// Inverse of [`parse_citations`] for answers whose sentences end in a
/// terminator.
pub fn render_citations(answer: &Answer) -> String {
    let mut out = String::new();
    for (i, sentence) in answer.sentences.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        out.push_str(sentence);
        if let Some(c) = answer.citations.iter().find(|c| c.sentence == i) {
            out.push_str(" |");
            for (j, id) in c.ids.iter().enumerate() {
                if j > 0 {
                    out.push_str(", ");
                }
                out.push_str(&alloc::format!("{id}"));
            }
            out.push('|');
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    fn ids(v: &[u32]) -> BTreeSet<u32> {
        v.iter().copied().collect()
    }

    #[test]
    fn citation_after_terminator() {
        let a = parse_citations("He was intubated. |2| He died. |1, 3|", &ids(&[1, 2, 3])).unwrap();
        assert_eq!(a.sentences, vec!["He was intubated.", "He died."]);
        assert_eq!(a.citations[0], Citation { sentence: 0, ids: ids(&[2]) });
        assert_eq!(a.citations[1], Citation { sentence: 1, ids: ids(&[1, 3]) });
    }

    #[test]
    fn citation_before_terminator() {
        let a = parse_citations("He was intubated |2|. Then he improved.", &ids(&[1, 2])).unwrap();
        assert_eq!(a.sentences, vec!["He was intubated.", "Then he improved."]);
        assert_eq!(a.citations, vec![Citation { sentence: 0, ids: ids(&[2]) }]);
        assert_eq!(a.cited_ids(), ids(&[2]));
    }

    #[test]
    fn invalid_ids_are_dropped() {
        let a = parse_citations("A. |1, 99| B. |98|", &ids(&[1, 2])).unwrap();
        assert_eq!(a.citations, vec![Citation { sentence: 0, ids: ids(&[1]) }]);
        assert_eq!(
            parse_citations("A. |99|", &ids(&[1])),
            Err(AttributionError::NoValidAttribution)
        );
        assert_eq!(
            parse_citations("No citations here.", &ids(&[1])),
            Err(AttributionError::NoValidAttribution)
        );
    }

    #[test]
    fn malformed_blocks() {
        assert_eq!(
            parse_citations("One |1, 2. Two.", &ids(&[1, 2])),
            Err(AttributionError::Unbalanced { offset: 4 })
        );
        assert_eq!(
            parse_citations("One || two.", &ids(&[1])),
            Err(AttributionError::MalformedBlock { offset: 4 })
        );
        assert_eq!(
            parse_citations("One |a| two.", &ids(&[1])),
            Err(AttributionError::MalformedBlock { offset: 4 })
        );
    }

    #[test]
    fn decimals_do_not_split() {
        let s = split_sentences("Measured 5.2 cm today. Stable!").unwrap();
        assert_eq!(s, vec!["Measured 5.2 cm today.", "Stable!"]);
    }

    fn sentence() -> impl Strategy<Value = String> {
        (proptest::collection::vec("[a-z0-9]{1,8}", 1..6), prop::sample::select(vec!['.', '!', '?'])).prop_map(
            |(words, t)| {
                let mut s = words.join(" ");
                s.push(t);
                s
            },
        )
    }

    fn answer() -> impl Strategy<Value = Answer> {
        proptest::collection::vec(
            (sentence(), proptest::collection::btree_set(1u32..60, 0..4)),
            1..6,
        )
        .prop_filter("needs a citation", |v| v.iter().any(|(_, ids)| !ids.is_empty()))
        .prop_map(|v| {
            let citations = v
                .iter()
                .enumerate()
                .filter(|(_, (_, ids))| !ids.is_empty())
                .map(|(i, (_, ids))| Citation { sentence: i, ids: ids.clone() })
                .collect();
            Answer {
                sentences: v.into_iter().map(|(s, _)| s).collect(),
                citations,
            }
        })
    }

    proptest! {
        #[test]
        fn render_parse_round_trip(a in answer()) {
            let valid = a.cited_ids();
            let rendered = render_citations(&a);
            prop_assert_eq!(parse_citations(&rendered, &valid).unwrap(), a);
        }

        #[test]
        fn parse_never_panics(raw in "[a-z .!?|,0-9]{0,40}") {
            let _ = parse_citations(&raw, &ids(&[1, 2, 3]));
        }
    }
}
