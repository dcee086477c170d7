//! Faithfulness-aware training data: Clean, Mask and Unlike records.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::annotate::{FaithLabel, RemovalSet};
use crate::corpus::CorpusExample;
use crate::error::{Error, Result};

/// Opens a run of unfaithful tokens.
pub const TAG_OPEN: &str = "<h>";
/// Closes a run of unfaithful tokens.
pub const TAG_CLOSE: &str = "</h>";

fn is_tag(t: &str) -> bool {
    t == TAG_OPEN || t == TAG_CLOSE
}

/// Summary tokens with the `[start, end)` token span of each sentence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenizedSummary {
    tokens: Vec<String>,
    spans: Vec<(usize, usize)>,
}

impl TokenizedSummary {
    /// Spans must be non-empty, in order, and tile `tokens` exactly. Tag
    /// strings are reserved and may not appear as tokens.
    pub fn new(tokens: Vec<String>, spans: Vec<(usize, usize)>) -> Result<Self> {
        let mut expected = 0;
        for (j, &(start, end)) in spans.iter().enumerate() {
            if start != expected || end <= start {
                return Err(Error::validation(format!(
                    "span {j} ({start}, {end}) does not continue at token {expected}"
                )));
            }
            expected = end;
        }
        if expected != tokens.len() {
            return Err(Error::validation(format!(
                "spans cover {expected} of {} tokens",
                tokens.len()
            )));
        }
        if let Some(t) = tokens.iter().find(|t| is_tag(t)) {
            return Err(Error::validation(format!("reserved tag {t:?} used as a token")));
        }
        Ok(Self { tokens, spans })
    }

    /// Concatenates per-sentence token lists.
    pub fn from_sentences(sentences: Vec<Vec<String>>) -> Result<Self> {
        let mut tokens = Vec::new();
        let mut spans = Vec::new();
        for s in sentences {
            let start = tokens.len();
            tokens.extend(s);
            spans.push((start, tokens.len()));
        }
        Self::new(tokens, spans)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn spans(&self) -> &[(usize, usize)] {
        &self.spans
    }
}

fn check_arity(summary: &TokenizedSummary, labels: &[FaithLabel]) -> Result<()> {
    if labels.len() != summary.spans.len() {
        return Err(Error::validation(format!(
            "{} sentence labels for {} sentences",
            labels.len(),
            summary.spans.len()
        )));
    }
    Ok(())
}

/// Copies each sentence's label onto its tokens (1 = faithful, 0 = not).
pub fn propagate_labels(summary: &TokenizedSummary, labels: &[FaithLabel]) -> Result<Vec<u8>> {
    check_arity(summary, labels)?;
    let mut out = Vec::with_capacity(summary.tokens.len());
    for (&(start, end), label) in summary.spans.iter().zip(labels) {
        out.extend(std::iter::repeat_n(label.flag(), end - start));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskRecord {
    pub id: String,
    pub tokens: Vec<String>,
    pub faithful: Vec<u8>,
}

pub fn make_mask(id: &str, summary: &TokenizedSummary, labels: &[FaithLabel]) -> Result<MaskRecord> {
    Ok(MaskRecord {
        id: id.to_string(),
        tokens: summary.tokens.clone(),
        faithful: propagate_labels(summary, labels)?,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnlikeRecord {
    pub id: String,
    pub tokens_with_tags: Vec<String>,
    /// Per original token: 1 for the faithful segment, 0 for the unfaithful one.
    pub segment: Vec<u8>,
    /// Original token positions whose segment is 0.
    pub unlikely_idx: Vec<usize>,
}

/// Wraps every maximal run of consecutive unfaithful sentences in one
/// `<h>` … `</h>` pair and derives the segment and unlikelihood streams.
pub fn make_unlike(id: &str, summary: &TokenizedSummary, labels: &[FaithLabel]) -> Result<UnlikeRecord> {
    let segment = propagate_labels(summary, labels)?;
    let mut tagged = Vec::with_capacity(summary.tokens.len() + 2);
    let mut open = false;
    for (&(start, end), label) in summary.spans.iter().zip(labels) {
        let unfaithful = *label == FaithLabel::No;
        if unfaithful && !open {
            tagged.push(TAG_OPEN.to_string());
            open = true;
        } else if !unfaithful && open {
            tagged.push(TAG_CLOSE.to_string());
            open = false;
        }
        tagged.extend_from_slice(&summary.tokens[start..end]);
    }
    if open {
        tagged.push(TAG_CLOSE.to_string());
    }
    let unlikely_idx = segment
        .iter()
        .enumerate()
        .filter(|(_, &s)| s == 0)
        .map(|(i, _)| i)
        .collect();
    Ok(UnlikeRecord {
        id: id.to_string(),
        tokens_with_tags: tagged,
        segment,
        unlikely_idx,
    })
}

/// Removes `<h>`/`</h>`. Tags must be balanced and not nested.
pub fn strip_tags(tokens: &[String]) -> Result<Vec<String>> {
    let mut open = false;
    let mut out = Vec::with_capacity(tokens.len());
    for (i, t) in tokens.iter().enumerate() {
        match t.as_str() {
            TAG_OPEN if open => {
                return Err(Error::validation(format!("nested {TAG_OPEN} at position {i}")))
            }
            TAG_OPEN => open = true,
            TAG_CLOSE if !open => {
                return Err(Error::validation(format!("unmatched {TAG_CLOSE} at position {i}")))
            }
            TAG_CLOSE => open = false,
            _ => out.push(t.clone()),
        }
    }
    if open {
        return Err(Error::validation(format!("unclosed {TAG_OPEN}")));
    }
    Ok(out)
}

/// Zeroes the tag entries of a next-token distribution and renormalises
/// the rest, as done at inference time.
pub fn mask_tag_probs(dist: &[f64], tag_ids: &[usize]) -> Result<Vec<f64>> {
    if dist.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(Error::validation("distribution has negative or non-finite entries"));
    }
    let total: f64 = dist.iter().sum();
    if (total - 1.0).abs() > 1e-6 {
        return Err(Error::validation(format!("distribution sums to {total}")));
    }
    if let Some(bad) = tag_ids.iter().find(|&&t| t >= dist.len()) {
        return Err(Error::validation(format!("tag id {bad} outside vocabulary of {}", dist.len())));
    }
    let tags: HashSet<usize> = tag_ids.iter().copied().collect();
    let kept: f64 = dist
        .iter()
        .enumerate()
        .filter(|(i, _)| !tags.contains(i))
        .map(|(_, p)| p)
        .sum();
    if kept <= 0.0 {
        return Err(Error::Degenerate("all probability mass is on tag tokens".into()));
    }
    Ok(dist
        .iter()
        .enumerate()
        .map(|(i, &p)| if tags.contains(&i) { 0.0 } else { p / kept })
        .collect())
}

/// Drops the examples named in `removal`, keeping order and content.
pub fn make_clean(corpus: &[CorpusExample], removal: &RemovalSet) -> Result<Vec<CorpusExample>> {
    let known: HashSet<&str> = corpus.iter().map(|e| e.id.as_str()).collect();
    if let Some(unknown) = removal.ids.iter().find(|id| !known.contains(id.as_str())) {
        return Err(Error::validation(format!("removal set names unknown id {unknown:?}")));
    }
    let drop: HashSet<&str> = removal.ids.iter().map(String::as_str).collect();
    Ok(corpus
        .iter()
        .filter(|e| !drop.contains(e.id.as_str()))
        .cloned()
        .collect())
}

/// Keeps only the examples named in `retain` (e.g. a Test_Faith set).
pub fn retain_only(corpus: &[CorpusExample], retain: &RemovalSet) -> Result<Vec<CorpusExample>> {
    let keep: HashSet<&str> = retain.ids.iter().map(String::as_str).collect();
    let known: HashSet<&str> = corpus.iter().map(|e| e.id.as_str()).collect();
    if let Some(unknown) = keep.iter().find(|id| !known.contains(*id)) {
        return Err(Error::validation(format!("retain set names unknown id {unknown:?}")));
    }
    Ok(corpus.iter().filter(|e| keep.contains(e.id.as_str())).cloned().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotate::SelectionRule;
    use crate::corpus::Sentence;
    use proptest::prelude::*;
    use FaithLabel::{No, Yes};

    fn toks(words: &str) -> Vec<String> {
        words.split_whitespace().map(String::from).collect()
    }

    fn five() -> TokenizedSummary {
        TokenizedSummary::new(toks("a b c d e"), vec![(0, 3), (3, 5)]).unwrap()
    }

    #[test]
    fn summary_validation() {
        assert!(TokenizedSummary::new(toks("a b"), vec![(0, 1)]).is_err());
        assert!(TokenizedSummary::new(toks("a b"), vec![(0, 1), (0, 2)]).is_err());
        assert!(TokenizedSummary::new(toks("a b"), vec![(0, 0), (0, 2)]).is_err());
        assert!(TokenizedSummary::new(toks("a <h>"), vec![(0, 2)]).is_err());
    }

    #[test]
    fn propagation() {
        assert_eq!(propagate_labels(&five(), &[Yes, No]).unwrap(), vec![1, 1, 1, 0, 0]);
        assert_eq!(propagate_labels(&five(), &[Yes, Yes]).unwrap(), vec![1; 5]);
        assert_eq!(propagate_labels(&five(), &[No, No]).unwrap(), vec![0; 5]);
        assert!(propagate_labels(&five(), &[No]).is_err());
    }

    #[test]
    fn unlike_wraps_unfaithful_sentence() {
        let r = make_unlike("x", &five(), &[Yes, No]).unwrap();
        assert_eq!(r.tokens_with_tags, toks("a b c <h> d e </h>"));
        assert_eq!(r.unlikely_idx, vec![3, 4]);
        assert_eq!(r.segment, vec![1, 1, 1, 0, 0]);

        let r = make_unlike("x", &five(), &[Yes, Yes]).unwrap();
        assert_eq!(r.tokens_with_tags, toks("a b c d e"));
        assert!(r.unlikely_idx.is_empty());
    }

    #[test]
    fn unlike_merges_runs() {
        let s = TokenizedSummary::from_sentences(vec![toks("a b"), toks("c"), toks("d e")]).unwrap();
        let r = make_unlike("x", &s, &[No, No, Yes]).unwrap();
        assert_eq!(r.tokens_with_tags, toks("<h> a b c </h> d e"));
        let r = make_unlike("x", &s, &[No, Yes, No]).unwrap();
        assert_eq!(r.tokens_with_tags, toks("<h> a b </h> c <h> d e </h>"));
    }

    #[test]
    fn strip_cases() {
        assert_eq!(strip_tags(&toks("a b")).unwrap(), toks("a b"));
        assert_eq!(strip_tags(&toks("a <h> b </h>")).unwrap(), toks("a b"));
        assert!(strip_tags(&toks("<h> a <h> b </h> </h>")).is_err());
        assert!(strip_tags(&toks("a </h>")).is_err());
        assert!(strip_tags(&toks("<h> a")).is_err());
    }

    #[test]
    fn tag_masking() {
        let out = mask_tag_probs(&[0.7, 0.2, 0.1], &[1, 2]).unwrap();
        assert!((out[0] - 1.0).abs() < 1e-12);
        assert_eq!(&out[1..], &[0.0, 0.0]);
        let out = mask_tag_probs(&[0.35, 0.35, 0.3], &[2]).unwrap();
        assert!((out[0] - 0.5).abs() < 1e-12 && (out[1] - 0.5).abs() < 1e-12);
        let same = mask_tag_probs(&[0.6, 0.4, 0.0], &[2]).unwrap();
        assert_eq!(same, vec![0.6, 0.4, 0.0]);
        assert!(matches!(mask_tag_probs(&[0.0, 0.5, 0.5], &[1, 2]), Err(Error::Degenerate(_))));
        assert!(mask_tag_probs(&[0.5, 0.5], &[2]).is_err());
        assert!(mask_tag_probs(&[0.5, 0.6], &[1]).is_err());
    }

    fn corpus(ids: &[&str]) -> Vec<CorpusExample> {
        ids.iter()
            .map(|id| CorpusExample {
                id: id.to_string(),
                src_lang: "fr".into(),
                tgt_lang: "en".into(),
                doc_sents: vec![Sentence { text: format!("doc {id}"), index: 0 }],
                sum_sents: vec![Sentence { text: format!("sum {id}"), index: 0 }],
                doc_tgt_sents: None,
                ref_sum_src: None,
            })
            .collect()
    }

    fn set(ids: &[&str]) -> RemovalSet {
        RemovalSet {
            rule: SelectionRule::Clean,
            amount: 0.0,
            ids: ids.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn clean_filtering() {
        let c = corpus(&["a", "b", "c"]);
        assert_eq!(make_clean(&c, &set(&[])).unwrap(), c);
        let out = make_clean(&c, &set(&["b"])).unwrap();
        assert_eq!(out, vec![c[0].clone(), c[2].clone()]);
        assert!(make_clean(&c, &set(&["zz"])).is_err());
        assert_eq!(retain_only(&c, &set(&["c"])).unwrap(), vec![c[2].clone()]);
    }

    fn labelled_summary() -> impl Strategy<Value = (TokenizedSummary, Vec<FaithLabel>)> {
        prop::collection::vec(
            (prop::collection::vec("[a-z]{1,5}", 1..6), any::<bool>()),
            1..8,
        )
        .prop_map(|sents| {
            let labels = sents.iter().map(|(_, y)| if *y { Yes } else { No }).collect();
            let s = TokenizedSummary::from_sentences(sents.into_iter().map(|(t, _)| t).collect()).unwrap();
            (s, labels)
        })
    }

    proptest! {
        #[test]
        fn unlike_roundtrip_and_consistency((s, labels) in labelled_summary()) {
            let r = make_unlike("x", &s, &labels).unwrap();
            prop_assert_eq!(strip_tags(&r.tokens_with_tags).unwrap(), s.tokens().to_vec());
            let flags = propagate_labels(&s, &labels).unwrap();
            prop_assert_eq!(&r.segment, &flags);
            let zeros: Vec<usize> = flags.iter().enumerate().filter(|(_, f)| **f == 0).map(|(i, _)| i).collect();
            prop_assert_eq!(&r.unlikely_idx, &zeros);
            let m = make_mask("x", &s, &labels).unwrap();
            prop_assert_eq!(m.faithful.len(), m.tokens.len());
        }

        #[test]
        fn masked_distribution_sums_to_one(raw in prop::collection::vec(0.01f64..1.0, 3..12), tag in 0usize..3) {
            let total: f64 = raw.iter().sum();
            let dist: Vec<f64> = raw.iter().map(|p| p / total).collect();
            let out = mask_tag_probs(&dist, &[tag]).unwrap();
            prop_assert!((out.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert_eq!(out[tag], 0.0);
        }
    }
}
