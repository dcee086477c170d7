//! Extractiveness statistics and lexical-overlap scores for corpus reports.
//!
//! No stemming or stopword removal is applied, so ROUGE values are lower than
//! those produced by stemming toolkits on inflected languages.

use std::collections::{BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::corpus::CorpusExample;
use crate::error::{Error, Result};

pub trait Tokenizer: Send + Sync {
    fn name(&self) -> &str;
    fn tokenize(&self, text: &str) -> Vec<String>;
}

fn is_cjk(c: char) -> bool {
    matches!(c as u32,
        0x3000..=0x303F      // CJK punctuation
        | 0x3040..=0x30FF    // kana
        | 0x3400..=0x4DBF
        | 0x4E00..=0x9FFF
        | 0xF900..=0xFAFF
        | 0xFF00..=0xFFEF    // full-width forms
        | 0x20000..=0x2FA1F)
}

/// Lowercases, splits on whitespace, and splits CJK runs into characters.
#[derive(Debug, Clone, Copy, Default)]
pub struct DefaultTokenizer;

impl Tokenizer for DefaultTokenizer {
    fn name(&self) -> &str {
        "default"
    }

    fn tokenize(&self, text: &str) -> Vec<String> {
        let mut out = Vec::new();
        for word in text.split_whitespace() {
            let mut run = String::new();
            for c in word.chars() {
                if is_cjk(c) {
                    if !run.is_empty() {
                        out.push(std::mem::take(&mut run).to_lowercase());
                    }
                    out.push(c.to_string());
                } else {
                    run.push(c);
                }
            }
            if !run.is_empty() {
                out.push(run.to_lowercase());
            }
        }
        out
    }
}

/// Lowercase + whitespace only.
#[derive(Debug, Clone, Copy, Default)]
pub struct WhitespaceTokenizer;

impl Tokenizer for WhitespaceTokenizer {
    fn name(&self) -> &str {
        "whitespace"
    }

    fn tokenize(&self, text: &str) -> Vec<String> {
        text.split_whitespace().map(str::to_lowercase).collect()
    }
}

pub fn tokenizer_by_name(name: &str) -> Result<Box<dyn Tokenizer>> {
    match name {
        "default" => Ok(Box::new(DefaultTokenizer)),
        "whitespace" => Ok(Box::new(WhitespaceTokenizer)),
        other => Err(Error::validation(format!(
            "unknown tokenizer {other:?} (expected default or whitespace)"
        ))),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    pub const ZERO: Prf = Prf {
        precision: 0.0,
        recall: 0.0,
        f1: 0.0,
    };

    fn from_overlap(overlap: usize, cand: usize, reference: usize) -> Prf {
        if overlap == 0 {
            return Prf::ZERO;
        }
        let precision = overlap as f64 / cand as f64;
        let recall = overlap as f64 / reference as f64;
        Prf {
            precision,
            recall,
            f1: 2.0 * precision * recall / (precision + recall),
        }
    }
}

fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub fn rouge_l<T: AsRef<str>>(candidate: &[T], reference: &[T]) -> Result<Prf> {
    if candidate.is_empty() || reference.is_empty() {
        return Err(Error::validation("ROUGE-L needs non-empty candidate and reference"));
    }
    let c: Vec<&str> = candidate.iter().map(AsRef::as_ref).collect();
    let r: Vec<&str> = reference.iter().map(AsRef::as_ref).collect();
    Ok(Prf::from_overlap(lcs_len(&c, &r), c.len(), r.len()))
}

fn ngram_counts<T: AsRef<str>>(tokens: &[T], n: usize) -> HashMap<Vec<&str>, usize> {
    let mut counts = HashMap::new();
    for w in tokens.windows(n) {
        *counts.entry(w.iter().map(AsRef::as_ref).collect()).or_insert(0) += 1;
    }
    counts
}

/// Bigram P/R/F1 with clipped counts; inputs shorter than two tokens score 0.
pub fn rouge_2<T: AsRef<str>>(candidate: &[T], reference: &[T]) -> Prf {
    if candidate.len() < 2 || reference.len() < 2 {
        return Prf::ZERO;
    }
    let cand = ngram_counts(candidate, 2);
    let refc = ngram_counts(reference, 2);
    let overlap: usize = cand
        .iter()
        .map(|(g, &c)| c.min(refc.get(g).copied().unwrap_or(0)))
        .sum();
    Prf::from_overlap(overlap, candidate.len() - 1, reference.len() - 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fragment {
    pub summary_start: usize,
    pub doc_start: usize,
    pub len: usize,
}

/// Greedy left-to-right matching: at each summary position take the longest
/// document match (earliest document start on ties); unmatched tokens are
/// skipped as novel.
pub fn extractive_fragments<T: AsRef<str>>(doc: &[T], summary: &[T]) -> Vec<Fragment> {
    let d: Vec<&str> = doc.iter().map(AsRef::as_ref).collect();
    let s: Vec<&str> = summary.iter().map(AsRef::as_ref).collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < s.len() {
        let mut best = Fragment {
            summary_start: i,
            doc_start: 0,
            len: 0,
        };
        for j in 0..d.len() {
            let len = s[i..].iter().zip(&d[j..]).take_while(|(a, b)| a == b).count();
            if len > best.len {
                best.doc_start = j;
                best.len = len;
            }
        }
        if best.len == 0 {
            i += 1;
        } else {
            i += best.len;
            out.push(best);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Extractiveness {
    pub coverage: f64,
    pub density: f64,
    pub compression: f64,
}

pub fn extractiveness(fragments: &[Fragment], doc_len: usize, summary_len: usize) -> Result<Extractiveness> {
    if doc_len == 0 || summary_len == 0 {
        return Err(Error::validation("extractiveness needs non-empty document and summary"));
    }
    let s = summary_len as f64;
    Ok(Extractiveness {
        coverage: fragments.iter().map(|f| f.len as f64).sum::<f64>() / s,
        density: fragments.iter().map(|f| (f.len * f.len) as f64).sum::<f64>() / s,
        compression: doc_len as f64 / s,
    })
}

/// Fraction of summary n-grams absent from the document's n-gram set.
pub fn novel_ngrams<T: AsRef<str>>(doc: &[T], summary: &[T], n: usize) -> Result<f64> {
    if n == 0 || summary.len() < n {
        return Err(Error::validation(format!(
            "summary of {} tokens has no {n}-grams",
            summary.len()
        )));
    }
    let doc_grams: HashSet<Vec<&str>> = doc
        .windows(n)
        .map(|w| w.iter().map(AsRef::as_ref).collect())
        .collect();
    let total = summary.len() + 1 - n;
    let novel = summary
        .windows(n)
        .filter(|w| !doc_grams.contains(&w.iter().map(AsRef::as_ref).collect::<Vec<_>>()))
        .count();
    Ok(novel as f64 / total as f64)
}

pub fn lead<T: Clone>(doc: &[T], n_tokens: usize) -> Vec<T> {
    doc[..n_tokens.min(doc.len())].to_vec()
}

/// Concatenates the chosen sentences in document order.
pub fn concat_selection<T: Clone>(doc_sents: &[Vec<T>], selection: &[usize]) -> Vec<T> {
    let ordered: BTreeSet<usize> = selection.iter().copied().collect();
    ordered.into_iter().flat_map(|i| doc_sents[i].iter().cloned()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleSelection {
    /// Sentence indices in selection order.
    pub indices: Vec<usize>,
    /// ROUGE-2 F1 after each step.
    pub objective: Vec<f64>,
}

/// Greedy ROUGE-2 F1 maximisation. Each step adds the sentence with the
/// largest strict improvement (lowest index on ties); the selection is scored
/// as the concatenation in document order.
pub fn ext_oracle<T: AsRef<str> + Clone>(doc_sents: &[Vec<T>], reference: &[T], max_sents: usize) -> OracleSelection {
    let mut chosen: Vec<usize> = Vec::new();
    let mut objective = Vec::new();
    let mut current = 0.0;
    while chosen.len() < max_sents {
        let mut best: Option<(usize, f64)> = None;
        for i in 0..doc_sents.len() {
            if chosen.contains(&i) {
                continue;
            }
            let mut trial = chosen.clone();
            trial.push(i);
            let f1 = rouge_2(&concat_selection(doc_sents, &trial), reference).f1;
            if f1 > current && best.is_none_or(|(_, b)| f1 > b) {
                best = Some((i, f1));
            }
        }
        match best {
            Some((i, f1)) => {
                chosen.push(i);
                objective.push(f1);
                current = f1;
            }
            None => break,
        }
    }
    OracleSelection {
        indices: chosen,
        objective,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleStats {
    pub words_doc: usize,
    pub sents_doc: usize,
    pub words_sum: usize,
    pub sents_sum: usize,
    pub coverage: f64,
    pub density: f64,
    pub compression: f64,
    /// Novel 1- to 4-gram fractions; `None` when the summary is too short.
    pub novel: [Option<f64>; 4],
    pub lead_rouge_l: f64,
    pub oracle_rouge_l: f64,
}

/// Extractiveness is measured against the target-language document when the
/// example carries one, since the cross-lingual document shares no surface
/// tokens with the summary.
pub fn example_stats(example: &CorpusExample, tok: &dyn Tokenizer) -> Result<ExampleStats> {
    let doc_sents_src = example.doc_tgt_sents.as_ref().unwrap_or(&example.doc_sents);
    let doc_sents: Vec<Vec<String>> = doc_sents_src.iter().map(|s| tok.tokenize(&s.text)).collect();
    let doc: Vec<String> = doc_sents.concat();
    let summary = tok.tokenize(&example.summary_text());
    if doc.is_empty() || summary.is_empty() {
        return Err(Error::validation(format!("example {} tokenizes to nothing", example.id)));
    }
    let ext = extractiveness(&extractive_fragments(&doc, &summary), doc.len(), summary.len())?;
    let mut novel = [None; 4];
    for (n, slot) in novel.iter_mut().enumerate() {
        if summary.len() > n {
            *slot = Some(novel_ngrams(&doc, &summary, n + 1)?);
        }
    }
    let lead_rouge_l = rouge_l(&lead(&doc, summary.len()), &summary)?.f1;
    let oracle = ext_oracle(&doc_sents, &summary, example.sum_sents.len());
    let picked = concat_selection(&doc_sents, &oracle.indices);
    let oracle_rouge_l = if picked.is_empty() { 0.0 } else { rouge_l(&picked, &summary)?.f1 };
    Ok(ExampleStats {
        words_doc: doc.len(),
        sents_doc: doc_sents_src.len(),
        words_sum: summary.len(),
        sents_sum: example.sum_sents.len(),
        coverage: ext.coverage,
        density: ext.density,
        compression: ext.compression,
        novel,
        lead_rouge_l,
        oracle_rouge_l,
    })
}

/// Per-example means, reported as table rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub n: usize,
    pub rows: Vec<(String, f64)>,
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 { f64::NAN } else { sum / n as f64 }
}

/// Coverage, novel n-grams and ROUGE are scaled by 100; density and
/// compression are raw ratios.
pub fn corpus_stats(stats: &[ExampleStats]) -> CorpusStats {
    let m = |f: &dyn Fn(&ExampleStats) -> f64| mean(stats.iter().map(f));
    let mut rows = vec![
        ("Words/Doc".to_string(), m(&|s| s.words_doc as f64)),
        ("Sents/Doc".to_string(), m(&|s| s.sents_doc as f64)),
        ("Words/Sum".to_string(), m(&|s| s.words_sum as f64)),
        ("Sents/Sum".to_string(), m(&|s| s.sents_sum as f64)),
        ("Coverage".to_string(), 100.0 * m(&|s| s.coverage)),
        ("Density".to_string(), m(&|s| s.density)),
        ("Compression".to_string(), m(&|s| s.compression)),
    ];
    for (n, label) in ["% novel unigrams", "% novel bigrams", "% novel trigrams", "% novel 4-grams"]
        .iter()
        .enumerate()
    {
        rows.push((label.to_string(), 100.0 * mean(stats.iter().filter_map(|s| s.novel[n]))));
    }
    rows.push(("LEAD".to_string(), 100.0 * m(&|s| s.lead_rouge_l)));
    rows.push(("EXT-ORACLE".to_string(), 100.0 * m(&|s| s.oracle_rouge_l)));
    CorpusStats { n: stats.len(), rows }
}

impl CorpusStats {
    pub fn to_tsv(&self, column: &str) -> String {
        let mut out = format!("metric\t{column}\n");
        for (name, v) in &self.rows {
            if v.is_nan() {
                out.push_str(&format!("{name}\tn/a\n"));
            } else {
                out.push_str(&format!("{name}\t{v:.2}\n"));
            }
        }
        out.push_str(&format!("# n={}\n", self.n));
        out
    }
}
