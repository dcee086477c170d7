//! Entailment matrices and premise-selection strategies.
//!
//! Summary sentences are hypotheses. The strategies differ in what they use
//! as the premise:
//!
//! | strategy     | premise                                                      |
//! |--------------|--------------------------------------------------------------|
//! | `fulldoc`    | the whole document                                           |
//! | `summac_zs`  | the single document sentence with the highest entailment     |
//! | `sentli`     | top-k by entailment ∪ top-k by contradiction, document order |
//! | `infuse`     | a growing entailment-ranked prefix, stopped on neutral       |
//!
//! Faithfulness is always the entailment probability of the chosen premise.
//! All rankings break ties toward the lower document index, and multi-sentence
//! premises are joined in document order with single spaces.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{join_sentences, CorpusExample};
use crate::error::{Error, Result};
use crate::scorer::{NliDistribution, NliScorer, ScorePair};

/// `rows × cols` grid of distributions; cell `(m, n)` scores document
/// sentence `m` as premise against summary sentence `n` as hypothesis.
#[derive(Debug, Clone, PartialEq)]
pub struct EntailmentMatrix {
    example_id: String,
    rows: usize,
    cols: usize,
    cells: Vec<NliDistribution>,
}

impl EntailmentMatrix {
    /// `cells` is row-major.
    pub fn new(
        example_id: impl Into<String>,
        rows: usize,
        cols: usize,
        cells: Vec<NliDistribution>,
    ) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::validation("entailment matrix needs at least one row and column"));
        }
        if cells.len() != rows * cols {
            return Err(Error::validation(format!(
                "{} cells for a {rows}x{cols} matrix",
                cells.len()
            )));
        }
        for (i, c) in cells.iter().enumerate() {
            c.validate().map_err(|e| e.context(format!("cell ({}, {})", i / cols, i % cols)))?;
        }
        Ok(Self {
            example_id: example_id.into(),
            rows,
            cols,
            cells,
        })
    }

    /// Builds a matrix from entailment probabilities alone; the remaining
    /// mass is split evenly between neutral and contradiction.
    pub fn from_entailment(example_id: impl Into<String>, entailment: &[Vec<f64>]) -> Result<Self> {
        let rows = entailment.len();
        let cols = entailment.first().map_or(0, Vec::len);
        if entailment.iter().any(|r| r.len() != cols) {
            return Err(Error::validation("ragged entailment rows"));
        }
        let cells = entailment
            .iter()
            .flatten()
            .map(|&e| NliDistribution {
                entailment: e,
                neutral: (1.0 - e) / 2.0,
                contradiction: (1.0 - e) / 2.0,
            })
            .collect();
        Self::new(example_id, rows, cols, cells)
    }

    pub fn example_id(&self) -> &str {
        &self.example_id
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, m: usize, n: usize) -> &NliDistribution {
        assert!(m < self.rows && n < self.cols, "cell ({m}, {n}) out of range");
        &self.cells[m * self.cols + n]
    }

    pub fn entailment(&self, m: usize, n: usize) -> f64 {
        self.get(m, n).entailment
    }

    pub fn column(&self, n: usize) -> impl Iterator<Item = &NliDistribution> + '_ {
        (0..self.rows).map(move |m| self.get(m, n))
    }

    /// Entailment probabilities as nested rows.
    pub fn entailment_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows)
            .map(|m| (0..self.cols).map(|n| self.entailment(m, n)).collect())
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    #[serde(rename = "fulldoc")]
    FullDoc,
    SummacZs,
    Sentli,
    Infuse,
    OneToOne,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [
        Strategy::FullDoc,
        Strategy::SummacZs,
        Strategy::Sentli,
        Strategy::Infuse,
        Strategy::OneToOne,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Strategy::FullDoc => "fulldoc",
            Strategy::SummacZs => "summac_zs",
            Strategy::Sentli => "sentli",
            Strategy::Infuse => "infuse",
            Strategy::OneToOne => "one_to_one",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| Error::validation(format!("unknown strategy {s:?}")))
    }
}

/// Faithfulness of one summary sentence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentenceFaithfulness {
    pub sentence: usize,
    pub score: f64,
    pub strategy: Strategy,
    /// Document sentence indices forming the premise, ascending.
    pub premises: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairFaithfulness {
    pub id: String,
    pub strategy: Strategy,
    pub sentences: Vec<SentenceFaithfulness>,
    /// Arithmetic mean of the sentence scores.
    pub aggregate: f64,
}

impl PairFaithfulness {
    pub fn sent_scores(&self) -> Vec<f64> {
        self.sentences.iter().map(|s| s.score).collect()
    }
}

pub fn mean_score(scores: &[f64]) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::validation("cannot average zero sentence scores"));
    }
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

/// Averages sentence-level faithfulness into a pair-level score.
pub fn pair_score(
    id: impl Into<String>,
    strategy: Strategy,
    sentences: Vec<SentenceFaithfulness>,
) -> Result<PairFaithfulness> {
    let scores: Vec<f64> = sentences.iter().map(|s| s.score).collect();
    let aggregate = mean_score(&scores)?;
    Ok(PairFaithfulness {
        id: id.into(),
        strategy,
        sentences,
        aggregate,
    })
}

fn score_all<S: NliScorer + ?Sized>(
    scorer: &S,
    pairs: &[ScorePair],
    ctx: impl Fn(usize) -> String,
) -> Result<Vec<NliDistribution>> {
    let out = scorer.score_pairs(pairs).map_err(|e| e.context(ctx(0)))?;
    if out.len() != pairs.len() {
        return Err(Error::Protocol(format!(
            "{}: scorer returned {} distributions for {} pairs",
            ctx(0),
            out.len(),
            pairs.len()
        )));
    }
    for (i, d) in out.iter().enumerate() {
        d.validate().map_err(|e| e.context(ctx(i)))?;
    }
    Ok(out)
}

/// Scores every (document sentence, summary sentence) pair in one batch.
pub fn build_matrix<S: NliScorer + ?Sized>(example: &CorpusExample, scorer: &S) -> Result<EntailmentMatrix> {
    let (rows, cols) = (example.doc_sents.len(), example.sum_sents.len());
    let pairs: Vec<ScorePair> = example
        .doc_sents
        .iter()
        .flat_map(|p| {
            example
                .sum_sents
                .iter()
                .map(move |h| ScorePair::new(p.text.clone(), h.text.clone()))
        })
        .collect();
    let cells = score_all(scorer, &pairs, |i| {
        format!("example {} cell ({}, {})", example.id, i / cols.max(1), i % cols.max(1))
    })?;
    EntailmentMatrix::new(example.id.clone(), rows, cols, cells)
}

/// Row with the largest value in column `n`; ties go to the lowest row.
fn argmax_row(matrix: &EntailmentMatrix, n: usize, value: impl Fn(&NliDistribution) -> f64) -> usize {
    let mut best = 0;
    for m in 1..matrix.rows() {
        if value(matrix.get(m, n)) > value(matrix.get(best, n)) {
            best = m;
        }
    }
    best
}

/// Rows of column `n` sorted by `value` descending, ties by row index.
fn ranked_rows(matrix: &EntailmentMatrix, n: usize, value: impl Fn(&NliDistribution) -> f64) -> Vec<usize> {
    let mut rows: Vec<usize> = (0..matrix.rows()).collect();
    rows.sort_by(|&a, &b| {
        value(matrix.get(b, n))
            .total_cmp(&value(matrix.get(a, n)))
            .then(a.cmp(&b))
    });
    rows
}

/// SummaC zero-shot: each summary sentence takes the best-entailing
/// document sentence as its only premise.
pub fn score_summac_zs(matrix: &EntailmentMatrix) -> Vec<SentenceFaithfulness> {
    (0..matrix.cols())
        .map(|n| {
            let m = argmax_row(matrix, n, |d| d.entailment);
            SentenceFaithfulness {
                sentence: n,
                score: matrix.entailment(m, n),
                strategy: Strategy::SummacZs,
                premises: vec![m],
            }
        })
        .collect()
}

/// Column-wise max of the entailment matrix, averaged over summary sentences.
pub fn score_one_to_one(matrix: &EntailmentMatrix) -> PairFaithfulness {
    let sentences: Vec<SentenceFaithfulness> = (0..matrix.cols())
        .map(|n| {
            let score = matrix
                .column(n)
                .map(|d| d.entailment)
                .fold(f64::NEG_INFINITY, f64::max);
            let m = argmax_row(matrix, n, |d| d.entailment);
            SentenceFaithfulness {
                sentence: n,
                score,
                strategy: Strategy::OneToOne,
                premises: vec![m],
            }
        })
        .collect();
    pair_score(matrix.example_id(), Strategy::OneToOne, sentences)
        .expect("a valid matrix has at least one column")
}

fn join_premise(example: &CorpusExample, indices: &[usize]) -> String {
    join_sentences(indices.iter().map(|&i| &example.doc_sents[i]))
}

/// The whole document is the premise for every summary sentence.
pub fn score_fulldoc<S: NliScorer + ?Sized>(example: &CorpusExample, scorer: &S) -> Result<Vec<SentenceFaithfulness>> {
    let doc = example.document_text();
    let pairs: Vec<ScorePair> = example
        .sum_sents
        .iter()
        .map(|h| ScorePair::new(doc.clone(), h.text.clone()))
        .collect();
    let dists = score_all(scorer, &pairs, |n| {
        format!("example {} fulldoc sentence {n}", example.id)
    })?;
    let all: Vec<usize> = (0..example.doc_sents.len()).collect();
    Ok(dists
        .iter()
        .enumerate()
        .map(|(n, d)| SentenceFaithfulness {
            sentence: n,
            score: d.entailment,
            strategy: Strategy::FullDoc,
            premises: all.clone(),
        })
        .collect())
}

/// Premise indices SeNtLI would use for summary sentence `n`.
pub fn sentli_premise(matrix: &EntailmentMatrix, n: usize, k: usize) -> Vec<usize> {
    let mut chosen: Vec<usize> = ranked_rows(matrix, n, |d| d.entailment)
        .into_iter()
        .take(k)
        .chain(ranked_rows(matrix, n, |d| d.contradiction).into_iter().take(k))
        .collect();
    chosen.sort_unstable();
    chosen.dedup();
    chosen
}

pub fn score_sentli<S: NliScorer + ?Sized>(
    example: &CorpusExample,
    scorer: &S,
    k: usize,
) -> Result<Vec<SentenceFaithfulness>> {
    let matrix = build_matrix(example, scorer)?;
    score_sentli_with_matrix(example, &matrix, scorer, k)
}

/// SeNtLI over a precomputed matrix: one extra scorer call per summary sentence.
pub fn score_sentli_with_matrix<S: NliScorer + ?Sized>(
    example: &CorpusExample,
    matrix: &EntailmentMatrix,
    scorer: &S,
    k: usize,
) -> Result<Vec<SentenceFaithfulness>> {
    if k == 0 {
        return Err(Error::validation("sentli k must be at least 1"));
    }
    let premises: Vec<Vec<usize>> = (0..matrix.cols()).map(|n| sentli_premise(matrix, n, k)).collect();
    let pairs: Vec<ScorePair> = premises
        .iter()
        .zip(&example.sum_sents)
        .map(|(idx, h)| ScorePair::new(join_premise(example, idx), h.text.clone()))
        .collect();
    let dists = score_all(scorer, &pairs, |n| {
        format!("example {} sentli sentence {n}", example.id)
    })?;
    Ok(dists
        .iter()
        .zip(premises)
        .enumerate()
        .map(|(n, (d, premises))| SentenceFaithfulness {
            sentence: n,
            score: d.entailment,
            strategy: Strategy::Sentli,
            premises,
        })
        .collect())
}

/// When the incremental premise stops growing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InfuseStop {
    /// Keep growing while neutral strictly decreases by more than `eps`.
    #[default]
    NeutralDecrease,
    /// Keep growing while neutral strictly increases by more than `eps`.
    NeutralIncrease,
}

impl FromStr for InfuseStop {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "neutral_decrease" | "decrease" => Ok(InfuseStop::NeutralDecrease),
            "neutral_increase" | "increase" => Ok(InfuseStop::NeutralIncrease),
            _ => Err(Error::validation(format!("unknown stopping rule {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InfuseParams {
    /// Premises grow unconditionally up to this many sentences (or M).
    pub min_premise: usize,
    pub eps: f64,
    pub stop: InfuseStop,
}

impl Default for InfuseParams {
    fn default() -> Self {
        Self {
            min_premise: 5,
            eps: 0.0,
            stop: InfuseStop::NeutralDecrease,
        }
    }
}

impl InfuseParams {
    pub fn validate(&self) -> Result<()> {
        if self.min_premise == 0 {
            return Err(Error::validation("infuse min_premise must be at least 1"));
        }
        if self.eps.is_nan() {
            return Err(Error::validation("infuse eps must be a number"));
        }
        Ok(())
    }

    fn stops(&self, neutral: f64, previous: f64) -> bool {
        match self.stop {
            InfuseStop::NeutralDecrease => neutral >= previous - self.eps,
            InfuseStop::NeutralIncrease => neutral <= previous + self.eps,
        }
    }
}

pub fn score_infuse<S: NliScorer + ?Sized>(
    example: &CorpusExample,
    scorer: &S,
    params: InfuseParams,
) -> Result<Vec<SentenceFaithfulness>> {
    let matrix = build_matrix(example, scorer)?;
    score_infuse_with_matrix(example, &matrix, scorer, params)
}

/// InFusE over a precomputed matrix.
///
/// For each summary sentence the document sentences are ranked by entailment.
/// Premise `i` is the top-`i` ranked sentences in document order. Growth is
/// unconditional up to `min(min_premise, M)` sentences; after that the first
/// step whose neutral probability fails the stopping rule ends the search and
/// the previous premise is kept. If no step fails, the whole ranking is used.
pub fn score_infuse_with_matrix<S: NliScorer + ?Sized>(
    example: &CorpusExample,
    matrix: &EntailmentMatrix,
    scorer: &S,
    params: InfuseParams,
) -> Result<Vec<SentenceFaithfulness>> {
    params.validate()?;
    let rows = matrix.rows();
    let floor = params.min_premise.min(rows);
    (0..matrix.cols())
        .map(|n| {
            let ranking = ranked_rows(matrix, n, |d| d.entailment);
            let hypothesis = &example.sum_sents[n].text;
            let mut accepted: Option<(NliDistribution, Vec<usize>)> = None;
            for size in 1..=rows {
                let mut premise: Vec<usize> = ranking[..size].to_vec();
                premise.sort_unstable();
                let pair = [ScorePair::new(join_premise(example, &premise), hypothesis.clone())];
                let dist = score_all(scorer, &pair, |_| {
                    format!("example {} infuse sentence {n} premise size {size}", example.id)
                })?[0];
                if size > floor {
                    let (prev, _) = accepted.as_ref().expect("floor is at least one");
                    if params.stops(dist.neutral, prev.neutral) {
                        break;
                    }
                }
                accepted = Some((dist, premise));
            }
            let (dist, premises) = accepted.expect("at least one premise is scored");
            Ok(SentenceFaithfulness {
                sentence: n,
                score: dist.entailment,
                strategy: Strategy::Infuse,
                premises,
            })
        })
        .collect()
}

/// Parameters for [`score_example`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StrategyConfig {
    pub strategy: Strategy,
    /// SeNtLI's k.
    pub k: usize,
    pub infuse: InfuseParams,
}

impl StrategyConfig {
    pub fn new(strategy: Strategy) -> Self {
        Self {
            strategy,
            k: 5,
            infuse: InfuseParams::default(),
        }
    }
}

/// Scores one example with the configured strategy.
pub fn score_example<S: NliScorer + ?Sized>(
    example: &CorpusExample,
    scorer: &S,
    config: &StrategyConfig,
) -> Result<PairFaithfulness> {
    let sentences = match config.strategy {
        Strategy::FullDoc => score_fulldoc(example, scorer)?,
        Strategy::SummacZs => score_summac_zs(&build_matrix(example, scorer)?),
        Strategy::OneToOne => return Ok(score_one_to_one(&build_matrix(example, scorer)?)),
        Strategy::Sentli => score_sentli(example, scorer, config.k)?,
        Strategy::Infuse => score_infuse(example, scorer, config.infuse)?,
    };
    pair_score(example.id.clone(), config.strategy, sentences)
}
