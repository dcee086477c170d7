//! Corpus data model, JSONL ingestion, sentence splitting and cross-lingual
//! NLI pair derivation.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};

/// A sentence and its 0-based position inside the sequence that owns it.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Sentence {
    pub text: String,
    pub index: usize,
}

/// One document/summary pair. The document is usually in the source language
/// and the summary in the target language.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusExample {
    pub id: String,
    pub src_lang: String,
    pub tgt_lang: String,
    pub doc_sents: Vec<Sentence>,
    pub sum_sents: Vec<Sentence>,
    /// Comparable document in the target language, when available.
    pub doc_tgt_sents: Option<Vec<Sentence>>,
    /// Reference summary in the source language, when available.
    pub ref_sum_src: Option<Vec<Sentence>>,
}

impl CorpusExample {
    /// Document sentences joined in order with single spaces.
    pub fn document_text(&self) -> String {
        join_sentences(self.doc_sents.iter())
    }

    pub fn summary_text(&self) -> String {
        join_sentences(self.sum_sents.iter())
    }

    pub fn lang_pair(&self) -> String {
        format!("{}-{}", self.src_lang, self.tgt_lang)
    }
}

pub(crate) fn join_sentences<'a>(sents: impl Iterator<Item = &'a Sentence>) -> String {
    let mut out = String::new();
    for s in sents {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(&s.text);
    }
    out
}

/// The set of language codes a corpus is allowed to use.
#[derive(Debug, Clone)]
pub struct LanguageSet {
    codes: Option<HashSet<String>>,
}

impl LanguageSet {
    /// X-NLI's fifteen languages plus Czech.
    pub const DEFAULT_CODES: &'static [&'static str] = &[
        "ar", "bg", "cs", "de", "el", "en", "es", "fr", "hi", "ru", "sw", "th", "tr", "ur", "vi",
        "zh",
    ];

    pub fn new<I, S>(codes: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            codes: Some(codes.into_iter().map(Into::into).collect()),
        }
    }

    /// Accepts any non-empty code.
    pub fn any() -> Self {
        Self { codes: None }
    }

    pub fn contains(&self, code: &str) -> bool {
        match &self.codes {
            Some(set) => set.contains(code),
            None => !code.is_empty(),
        }
    }
}

impl Default for LanguageSet {
    fn default() -> Self {
        Self::new(Self::DEFAULT_CODES.iter().copied())
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CorpusRecord {
    id: String,
    src_lang: String,
    tgt_lang: String,
    doc_sents: Vec<String>,
    sum_sents: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    doc_tgt_sents: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    ref_sum_src: Option<Vec<String>>,
}

fn nfc(s: &str) -> String {
    s.nfc().collect()
}

fn to_sentences(raw: Vec<String>, field: &str, line: usize) -> Result<Vec<Sentence>> {
    raw.into_iter()
        .enumerate()
        .map(|(index, text)| {
            let text = nfc(&text);
            if text.trim().is_empty() {
                return Err(Error::validation(format!(
                    "line {line}: {field}[{index}] is empty"
                )));
            }
            Ok(Sentence { text, index })
        })
        .collect()
}

/// Reads a JSONL corpus using the default language set.
pub fn parse_corpus<R: BufRead>(reader: R) -> Result<Vec<CorpusExample>> {
    parse_corpus_with(reader, &LanguageSet::default())
}

/// Reads a JSONL corpus, one example per non-blank line. Strings are NFC
/// normalised. Input order is preserved and ids must be unique.
pub fn parse_corpus_with<R: BufRead>(reader: R, langs: &LanguageSet) -> Result<Vec<CorpusExample>> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: CorpusRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let id = nfc(&rec.id);
        if !seen.insert(id.clone()) {
            return Err(Error::validation(format!("line {line_no}: duplicate id {id:?}")));
        }
        for lang in [&rec.src_lang, &rec.tgt_lang] {
            if !langs.contains(lang) {
                return Err(Error::validation(format!(
                    "line {line_no}: language code {lang:?} is not in the configured set"
                )));
            }
        }
        if rec.doc_sents.is_empty() {
            return Err(Error::validation(format!("line {line_no}: doc_sents is empty")));
        }
        if rec.sum_sents.is_empty() {
            return Err(Error::validation(format!("line {line_no}: sum_sents is empty")));
        }
        out.push(CorpusExample {
            id,
            src_lang: rec.src_lang,
            tgt_lang: rec.tgt_lang,
            doc_sents: to_sentences(rec.doc_sents, "doc_sents", line_no)?,
            sum_sents: to_sentences(rec.sum_sents, "sum_sents", line_no)?,
            doc_tgt_sents: rec
                .doc_tgt_sents
                .map(|v| to_sentences(v, "doc_tgt_sents", line_no))
                .transpose()?,
            ref_sum_src: rec
                .ref_sum_src
                .map(|v| to_sentences(v, "ref_sum_src", line_no))
                .transpose()?,
        });
    }
    Ok(out)
}

fn texts(sents: &[Sentence]) -> Vec<String> {
    sents.iter().map(|s| s.text.clone()).collect()
}

/// Serialises one example as a single JSON line (without the newline).
pub fn example_to_json(ex: &CorpusExample) -> String {
    let rec = CorpusRecord {
        id: ex.id.clone(),
        src_lang: ex.src_lang.clone(),
        tgt_lang: ex.tgt_lang.clone(),
        doc_sents: texts(&ex.doc_sents),
        sum_sents: texts(&ex.sum_sents),
        doc_tgt_sents: ex.doc_tgt_sents.as_deref().map(texts),
        ref_sum_src: ex.ref_sum_src.as_deref().map(texts),
    };
    serde_json::to_string(&rec).expect("corpus records always serialise")
}

pub fn write_corpus<W: Write>(mut w: W, corpus: &[CorpusExample]) -> Result<()> {
    for ex in corpus {
        writeln!(w, "{}", example_to_json(ex))?;
    }
    Ok(())
}

fn is_cjk_terminator(c: char) -> bool {
    matches!(c, '。' | '！' | '？')
}

fn is_ascii_terminator(c: char) -> bool {
    matches!(c, '.' | '!' | '?')
}

/// Rule-based sentence splitter.
///
/// `.`, `!` and `?` end a sentence when followed by whitespace or the end of
/// the text. The full-width terminators `。！？` always end a sentence, since
/// CJK text does not put spaces between sentences. The language code is
/// accepted for interface stability; the rule is the same for every language.
pub fn split_sentences(text: &str, _lang: &str) -> Vec<Sentence> {
    let text = nfc(text);
    let chars: Vec<char> = text.chars().collect();
    let mut pieces = Vec::new();
    let mut current = String::new();
    for (i, &c) in chars.iter().enumerate() {
        current.push(c);
        let next = chars.get(i + 1).copied();
        let boundary = if is_cjk_terminator(c) {
            // keep runs like "！？" together
            !next.is_some_and(is_cjk_terminator)
        } else if is_ascii_terminator(c) {
            next.is_none_or(char::is_whitespace)
        } else {
            false
        };
        if boundary {
            pieces.push(std::mem::take(&mut current));
        }
    }
    pieces.push(current);
    pieces
        .into_iter()
        .map(|p| p.trim().to_string())
        .filter(|p| !p.is_empty())
        .enumerate()
        .map(|(index, text)| Sentence { text, index })
        .collect()
}

/// The three NLI classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NliLabel {
    Entailment,
    Neutral,
    Contradiction,
}

impl fmt::Display for NliLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NliLabel::Entailment => "entailment",
            NliLabel::Neutral => "neutral",
            NliLabel::Contradiction => "contradiction",
        })
    }
}

/// One row of a multilingual NLI test set where every language version of
/// the premise and hypothesis carries the same gold label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct XnliAlignedRow {
    pub gold_label: NliLabel,
    pub premise: BTreeMap<String, String>,
    pub hypothesis: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NliPair {
    pub premise: String,
    pub hypothesis: String,
    pub gold_label: NliLabel,
}

pub fn parse_xnli<R: BufRead>(reader: R) -> Result<Vec<XnliAlignedRow>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut row: XnliAlignedRow = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        for v in row.premise.values_mut().chain(row.hypothesis.values_mut()) {
            *v = nfc(v);
        }
        out.push(row);
    }
    Ok(out)
}

/// Pairs the premise in one language with the hypothesis in another.
/// With equal languages this is the monolingual projection of the rows.
pub fn derive_cross_pairs(
    rows: &[XnliAlignedRow],
    premise_lang: &str,
    hypothesis_lang: &str,
) -> Result<Vec<NliPair>> {
    rows.iter()
        .enumerate()
        .map(|(i, row)| {
            let premise = row.premise.get(premise_lang).ok_or_else(|| {
                Error::validation(format!("row {i}: no premise in language {premise_lang:?}"))
            })?;
            let hypothesis = row.hypothesis.get(hypothesis_lang).ok_or_else(|| {
                Error::validation(format!(
                    "row {i}: no hypothesis in language {hypothesis_lang:?}"
                ))
            })?;
            Ok(NliPair {
                premise: premise.clone(),
                hypothesis: hypothesis.clone(),
                gold_label: row.gold_label,
            })
        })
        .collect()
}

/// Languages present in every row, for both premise and hypothesis.
pub fn common_languages(rows: &[XnliAlignedRow]) -> BTreeSet<String> {
    let mut iter = rows.iter();
    let Some(first) = iter.next() else {
        return BTreeSet::new();
    };
    let mut langs: BTreeSet<String> = first
        .premise
        .keys()
        .filter(|k| first.hypothesis.contains_key(*k))
        .cloned()
        .collect();
    for row in iter {
        langs.retain(|l| row.premise.contains_key(l) && row.hypothesis.contains_key(l));
    }
    langs
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const LINE: &str = r#"{"id":"a1","src_lang":"fr","tgt_lang":"en","doc_sents":["Il pleut.","Il fait froid."],"sum_sents":["It rains."]}"#;

    #[test]
    fn parses_one_line() {
        let corpus = parse_corpus(LINE.as_bytes()).unwrap();
        assert_eq!(corpus.len(), 1);
        assert_eq!(corpus[0].doc_sents.len(), 2);
        assert_eq!(corpus[0].sum_sents.len(), 1);
        assert_eq!(corpus[0].doc_sents[1].index, 1);
        assert_eq!(corpus[0].lang_pair(), "fr-en");
    }

    #[test]
    fn empty_stream_is_empty_corpus() {
        assert!(parse_corpus(&b""[..]).unwrap().is_empty());
    }

    #[test]
    fn missing_field_names_field_and_line() {
        let input = format!(
            "{LINE}\n{}",
            r#"{"id":"a2","src_lang":"fr","tgt_lang":"en","doc_sents":["x"]}"#
        );
        let err = parse_corpus(input.as_bytes()).unwrap_err();
        match err {
            Error::Parse { line, message } => {
                assert_eq!(line, 2);
                assert!(message.contains("sum_sents"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_ids_rejected() {
        let input = format!("{LINE}\n{LINE}\n");
        assert!(matches!(parse_corpus(input.as_bytes()), Err(Error::Validation(_))));
    }

    #[test]
    fn empty_summary_rejected() {
        let line = r#"{"id":"a","src_lang":"fr","tgt_lang":"en","doc_sents":["x"],"sum_sents":[]}"#;
        assert!(matches!(parse_corpus(line.as_bytes()), Err(Error::Validation(_))));
        let line = r#"{"id":"a","src_lang":"fr","tgt_lang":"en","doc_sents":["x"],"sum_sents":["  "]}"#;
        assert!(matches!(parse_corpus(line.as_bytes()), Err(Error::Validation(_))));
    }

    #[test]
    fn unknown_language_rejected() {
        let line = r#"{"id":"a","src_lang":"xx","tgt_lang":"en","doc_sents":["x"],"sum_sents":["y"]}"#;
        assert!(parse_corpus(line.as_bytes()).is_err());
        assert!(parse_corpus_with(line.as_bytes(), &LanguageSet::any()).is_ok());
    }

    #[test]
    fn ingestion_normalises_to_nfc() {
        // "é" as e + combining acute
        let line = "{\"id\":\"a\",\"src_lang\":\"fr\",\"tgt_lang\":\"en\",\"doc_sents\":[\"e\u{301}t\u{e9}\"],\"sum_sents\":[\"y\"]}";
        let c = parse_corpus(line.as_bytes()).unwrap();
        assert_eq!(c[0].doc_sents[0].text, "\u{e9}t\u{e9}");
    }

    #[test]
    fn split_simple() {
        let s: Vec<_> = split_sentences("A. B.", "en").into_iter().map(|s| s.text).collect();
        assert_eq!(s, ["A.", "B."]);
        let s: Vec<_> = split_sentences("One sentence", "en").into_iter().map(|s| s.text).collect();
        assert_eq!(s, ["One sentence"]);
        assert!(split_sentences("   \n ", "en").is_empty());
    }

    #[test]
    fn split_keeps_inner_periods() {
        let s: Vec<_> = split_sentences("Pi is 3.14 roughly. Yes!", "en")
            .into_iter()
            .map(|s| s.text)
            .collect();
        assert_eq!(s, ["Pi is 3.14 roughly.", "Yes!"]);
    }

    #[test]
    fn split_cjk() {
        let s: Vec<_> = split_sentences("今天下雨。我们在家。明天会晴！", "zh")
            .into_iter()
            .map(|s| s.text)
            .collect();
        assert_eq!(s, ["今天下雨。", "我们在家。", "明天会晴！"]);
    }

    #[test]
    fn cross_pairs_from_aligned_row() {
        let row = XnliAlignedRow {
            gold_label: NliLabel::Entailment,
            premise: BTreeMap::from([
                ("en".into(), "There's so much you could talk about on that I'll just skip that.".into()),
                ("fr".into(), "Il y a tellement de choses dont vous pourriez parler que je vais juste m'en passer.".into()),
            ]),
            hypothesis: BTreeMap::from([
                ("en".into(), "I won't talk about that, even though there's a lot to cover.".into()),
                ("fr".into(), "Je n'en parlerai pas, même s'il y a beaucoup à couvrir.".into()),
            ]),
        };
        let pairs = derive_cross_pairs(std::slice::from_ref(&row), "fr", "en").unwrap();
        assert_eq!(pairs.len(), 1);
        assert!(pairs[0].premise.starts_with("Il y a tellement de choses"));
        assert!(pairs[0].hypothesis.starts_with("I won't talk about that"));
        assert_eq!(pairs[0].gold_label, NliLabel::Entailment);

        let mono = derive_cross_pairs(std::slice::from_ref(&row), "en", "en").unwrap();
        assert_eq!(mono[0].premise, row.premise["en"]);
        assert_eq!(mono[0].hypothesis, row.hypothesis["en"]);

        let err = derive_cross_pairs(&[row.clone(), row], "de", "en").unwrap_err();
        assert!(err.to_string().contains("row 0"));
    }

    #[test]
    fn xnli_jsonl_parses() {
        let line = r#"{"gold_label":"neutral","premise":{"en":"a","zh":"甲"},"hypothesis":{"en":"b","zh":"乙"}}"#;
        let rows = parse_xnli(line.as_bytes()).unwrap();
        assert_eq!(rows[0].gold_label, NliLabel::Neutral);
        assert_eq!(common_languages(&rows).into_iter().collect::<Vec<_>>(), ["en", "zh"]);
        let bad = r#"{"gold_label":"maybe","premise":{},"hypothesis":{}}"#;
        assert!(matches!(parse_xnli(bad.as_bytes()), Err(Error::Parse { line: 1, .. })));
    }

    fn sentence_text() -> impl Strategy<Value = String> {
        "[a-zA-Z0-9éü ,]{0,12}[a-z]{1,4}".prop_map(|s| s.trim().to_string())
    }

    proptest! {
        #[test]
        fn corpus_roundtrip(docs in prop::collection::vec(sentence_text(), 1..5),
                            sums in prop::collection::vec(sentence_text(), 1..4),
                            with_ref in any::<bool>()) {
            let ex = CorpusExample {
                id: "x".into(),
                src_lang: "de".into(),
                tgt_lang: "en".into(),
                doc_sents: docs.iter().enumerate().map(|(index, t)| Sentence { text: t.clone(), index }).collect(),
                sum_sents: sums.iter().enumerate().map(|(index, t)| Sentence { text: t.clone(), index }).collect(),
                doc_tgt_sents: None,
                ref_sum_src: with_ref.then(|| vec![Sentence { text: "ref".into(), index: 0 }]),
            };
            let mut buf = Vec::new();
            write_corpus(&mut buf, std::slice::from_ref(&ex)).unwrap();
            let back = parse_corpus(buf.as_slice()).unwrap();
            prop_assert_eq!(back, vec![ex]);
        }

        #[test]
        fn split_produces_contiguous_non_empty(text in "[a-z .!?。]{0,60}") {
            let sents = split_sentences(&text, "en");
            for (i, s) in sents.iter().enumerate() {
                prop_assert_eq!(s.index, i);
                prop_assert!(!s.text.trim().is_empty());
            }
            let joined: String = sents.iter().map(|s| s.text.as_str()).collect::<Vec<_>>().join(" ");
            let squash = |s: &str| s.chars().filter(|c| !c.is_whitespace()).collect::<String>();
            prop_assert_eq!(squash(&joined), squash(&text));
        }
    }
}
