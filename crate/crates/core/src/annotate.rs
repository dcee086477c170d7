//! Corpus-wide faithfulness labels and subset selection.
//!
//! Scores become labels by rank, not by an absolute cut-off: the lowest
//! `pct` percent of sentences (or examples) are marked unfaithful. Counts use
//! `floor`, and ties keep input order.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt::Write as _;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FaithLabel {
    Yes,
    No,
}

impl FaithLabel {
    /// Token-level flag: 1 for faithful, 0 for unfaithful.
    pub fn flag(self) -> u8 {
        match self {
            FaithLabel::Yes => 1,
            FaithLabel::No => 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentenceScore {
    pub id: String,
    pub sent_idx: usize,
    pub score: f64,
}

impl SentenceScore {
    pub fn new(id: impl Into<String>, sent_idx: usize, score: f64) -> Self {
        Self {
            id: id.into(),
            sent_idx,
            score,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaithfulnessAnnotation {
    pub id: String,
    pub sent_idx: usize,
    pub score: f64,
    pub label: FaithLabel,
}

fn check_pct(pct: f64) -> Result<()> {
    if !(0.0..=100.0).contains(&pct) {
        return Err(Error::validation(format!("pct {pct} outside [0, 100]")));
    }
    Ok(())
}

/// `floor(pct / 100 · n)`, computed as `floor(pct · n / 100)` so whole
/// percentages of whole counts are exact.
pub fn fraction_count(pct: f64, n: usize) -> usize {
    ((pct * n as f64) / 100.0).floor() as usize
}

/// Indices of the `count` lowest scores; equal scores keep input order.
fn lowest(scores: &[f64], count: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    order.truncate(count);
    order
}

fn check_finite(scores: impl IntoIterator<Item = f64>) -> Result<()> {
    if scores.into_iter().any(|s| !s.is_finite()) {
        return Err(Error::validation("scores must be finite"));
    }
    Ok(())
}

/// Labels the lowest-scoring `pct` percent of sentences `no` and the rest
/// `yes`. Output follows input order.
pub fn annotate_threshold(scores: &[SentenceScore], pct: f64) -> Result<Vec<FaithfulnessAnnotation>> {
    check_pct(pct)?;
    if scores.is_empty() {
        return Err(Error::validation("no sentence scores to annotate"));
    }
    let values: Vec<f64> = scores.iter().map(|s| s.score).collect();
    check_finite(values.iter().copied())?;
    let unfaithful: HashSet<usize> = lowest(&values, fraction_count(pct, scores.len()))
        .into_iter()
        .collect();
    Ok(scores
        .iter()
        .enumerate()
        .map(|(i, s)| FaithfulnessAnnotation {
            id: s.id.clone(),
            sent_idx: s.sent_idx,
            score: s.score,
            label: if unfaithful.contains(&i) {
                FaithLabel::No
            } else {
                FaithLabel::Yes
            },
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionRule {
    /// Lowest-scoring examples, to be dropped.
    Clean,
    /// Uniformly drawn examples, to be dropped.
    Random,
    /// Highest combined-score examples, to be kept.
    TestFaith,
}

impl SelectionRule {
    pub fn as_str(&self) -> &'static str {
        match self {
            SelectionRule::Clean => "clean",
            SelectionRule::Random => "random",
            SelectionRule::TestFaith => "test_faith",
        }
    }
}

/// Example ids selected by a rule: ids to drop for `Clean`/`Random`, ids to
/// keep for `TestFaith`. Ids are listed in corpus order.
#[derive(Debug, Clone, PartialEq)]
pub struct RemovalSet {
    pub rule: SelectionRule,
    /// Percentage for `Clean`/`Random`, fraction in (0, 1] for `TestFaith`.
    pub amount: f64,
    pub ids: Vec<String>,
}

impl RemovalSet {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.ids.iter().any(|i| i == id)
    }

    /// Newline-delimited ids under a `#` header naming the rule.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let key = match self.rule {
            SelectionRule::TestFaith => "fraction",
            _ => "pct",
        };
        let _ = writeln!(out, "# rule={} {key}={}", self.rule.as_str(), self.amount);
        for id in &self.ids {
            let _ = writeln!(out, "{id}");
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .and_then(|l| l.strip_prefix("# "))
            .ok_or_else(|| Error::Parse {
                line: 1,
                message: "missing '# rule=... ' header".into(),
            })?;
        let mut rule = None;
        let mut amount = None;
        for field in header.split_whitespace() {
            match field.split_once('=') {
                Some(("rule", "clean")) => rule = Some(SelectionRule::Clean),
                Some(("rule", "random")) => rule = Some(SelectionRule::Random),
                Some(("rule", "test_faith")) => rule = Some(SelectionRule::TestFaith),
                Some(("pct" | "fraction", v)) => amount = v.parse::<f64>().ok(),
                _ => {}
            }
        }
        let (Some(rule), Some(amount)) = (rule, amount) else {
            return Err(Error::Parse {
                line: 1,
                message: format!("unrecognised header {header:?}"),
            });
        };
        let ids = lines
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(String::from)
            .collect();
        Ok(Self { rule, amount, ids })
    }
}

/// Clean removal: average each example's sentence scores and select the
/// lowest `pct` percent of examples.
pub fn clean_removal(examples: &[(String, Vec<f64>)], pct: f64) -> Result<RemovalSet> {
    check_pct(pct)?;
    let mut means = Vec::with_capacity(examples.len());
    for (id, scores) in examples {
        if scores.is_empty() {
            return Err(Error::validation(format!("example {id:?} has no sentence scores")));
        }
        check_finite(scores.iter().copied())?;
        means.push(scores.iter().sum::<f64>() / scores.len() as f64);
    }
    let mut chosen = lowest(&means, fraction_count(pct, examples.len()));
    chosen.sort_unstable();
    Ok(RemovalSet {
        rule: SelectionRule::Clean,
        amount: pct,
        ids: chosen.into_iter().map(|i| examples[i].0.clone()).collect(),
    })
}

/// The Random baseline: as many ids as `size`, drawn uniformly with a seeded RNG.
pub fn random_removal(ids: &[String], size: usize, pct: f64, seed: u64) -> Result<RemovalSet> {
    if size > ids.len() {
        return Err(Error::validation(format!(
            "cannot draw {size} ids from {}",
            ids.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = sample(&mut rng, ids.len(), size).into_vec();
    chosen.sort_unstable();
    Ok(RemovalSet {
        rule: SelectionRule::Random,
        amount: pct,
        ids: chosen.into_iter().map(|i| ids[i].clone()).collect(),
    })
}

/// Min-max normalisation to `[0, 1]`; a constant stream maps to zeros.
pub fn min_max_normalize(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return vec![0.0; values.len()];
    }
    values.iter().map(|v| (v - lo) / (hi - lo)).collect()
}

/// Test_Faith selection. Both score streams are min-max normalised over the
/// corpus and averaged per id; the top `floor(fraction · n)` ids are kept.
/// Ties keep the order of `faithfulness`.
pub fn select_test_faith(
    faithfulness: &[(String, f64)],
    similarity: &BTreeMap<String, f64>,
    fraction: f64,
) -> Result<RemovalSet> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::validation(format!("fraction {fraction} outside (0, 1]")));
    }
    let ids: BTreeSet<&String> = faithfulness.iter().map(|(id, _)| id).collect();
    if ids.len() != faithfulness.len() {
        return Err(Error::validation("duplicate id in faithfulness scores"));
    }
    if ids.len() != similarity.len() || !ids.iter().all(|id| similarity.contains_key(*id)) {
        return Err(Error::validation(
            "faithfulness and similarity scores cover different ids",
        ));
    }
    let faith: Vec<f64> = faithfulness.iter().map(|(_, s)| *s).collect();
    let sim: Vec<f64> = faithfulness.iter().map(|(id, _)| similarity[id]).collect();
    check_finite(faith.iter().chain(&sim).copied())?;
    let combined: Vec<f64> = min_max_normalize(&faith)
        .iter()
        .zip(min_max_normalize(&sim))
        .map(|(a, b)| (a + b) / 2.0)
        .collect();

    let keep = (fraction * faithfulness.len() as f64).floor() as usize;
    let mut order: Vec<usize> = (0..combined.len()).collect();
    order.sort_by(|&a, &b| combined[b].total_cmp(&combined[a]));
    order.truncate(keep);
    order.sort_unstable();
    Ok(RemovalSet {
        rule: SelectionRule::TestFaith,
        amount: fraction,
        ids: order.into_iter().map(|i| faithfulness[i].0.clone()).collect(),
    })
}

/// Text similarity in `[-1, 1]`, e.g. between a summary and a reference in
/// another language.
pub trait SimilarityScorer: Send + Sync {
    fn scorer_id(&self) -> &str;
    fn similarity(&self, a: &str, b: &str) -> f64;
}

/// Cosine similarity of lowercase bag-of-words counts. Only meaningful when
/// both texts share a vocabulary; a stand-in for a multilingual sentence
/// encoder.
#[derive(Debug, Default, Clone)]
pub struct BagOfWordsCosine;

impl SimilarityScorer for BagOfWordsCosine {
    fn scorer_id(&self) -> &str {
        "bow-cosine"
    }

    fn similarity(&self, a: &str, b: &str) -> f64 {
        let counts = |s: &str| {
            let mut m: BTreeMap<String, f64> = BTreeMap::new();
            for t in s.split_whitespace() {
                *m.entry(t.to_lowercase()).or_default() += 1.0;
            }
            m
        };
        let (ca, cb) = (counts(a), counts(b));
        let dot: f64 = ca.iter().filter_map(|(k, v)| cb.get(k).map(|w| v * w)).sum();
        let norm = |m: &BTreeMap<String, f64>| m.values().map(|v| v * v).sum::<f64>().sqrt();
        let denom = norm(&ca) * norm(&cb);
        if denom == 0.0 {
            0.0
        } else {
            dot / denom
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ten() -> Vec<SentenceScore> {
        // shuffled 0.1..1.0
        [0.5, 0.1, 0.9, 0.3, 1.0, 0.2, 0.7, 0.4, 0.8, 0.6]
            .iter()
            .enumerate()
            .map(|(i, &s)| SentenceScore::new(format!("e{}", i / 2), i % 2, s))
            .collect()
    }

    fn no_count(a: &[FaithfulnessAnnotation]) -> usize {
        a.iter().filter(|x| x.label == FaithLabel::No).count()
    }

    #[test]
    fn threshold_marks_lowest() {
        let a = annotate_threshold(&ten(), 20.0).unwrap();
        let no: Vec<f64> = a.iter().filter(|x| x.label == FaithLabel::No).map(|x| x.score).collect();
        assert_eq!(no, vec![0.1, 0.2]);
        assert_eq!(no_count(&annotate_threshold(&ten(), 0.0).unwrap()), 0);
        assert_eq!(no_count(&annotate_threshold(&ten(), 100.0).unwrap()), 10);
        assert_eq!(no_count(&annotate_threshold(&ten(), 10.0).unwrap()), 1);
        assert_eq!(no_count(&annotate_threshold(&ten(), 15.0).unwrap()), 1);
    }

    #[test]
    fn threshold_errors() {
        assert!(annotate_threshold(&[], 10.0).is_err());
        assert!(annotate_threshold(&ten(), 101.0).is_err());
        assert!(annotate_threshold(&ten(), -1.0).is_err());
        let nan = vec![SentenceScore::new("a", 0, f64::NAN)];
        assert!(annotate_threshold(&nan, 10.0).is_err());
    }

    #[test]
    fn threshold_ties_follow_input_order() {
        let s: Vec<_> = (0..4).map(|i| SentenceScore::new("x", i, 0.5)).collect();
        let a = annotate_threshold(&s, 50.0).unwrap();
        let labels: Vec<_> = a.iter().map(|x| x.label).collect();
        assert_eq!(labels, [FaithLabel::No, FaithLabel::No, FaithLabel::Yes, FaithLabel::Yes]);
    }

    #[test]
    fn clean_examples() {
        let ex = vec![("A".to_string(), vec![0.9, 0.9]), ("B".to_string(), vec![0.1, 0.3])];
        assert_eq!(clean_removal(&ex, 50.0).unwrap().ids, vec!["B"]);
        assert_eq!(clean_removal(&ex, 100.0).unwrap().ids, vec!["A", "B"]);
        assert!(clean_removal(&ex, 0.0).unwrap().is_empty());
        let tied = vec![("A".to_string(), vec![0.5]), ("B".to_string(), vec![0.2, 0.8])];
        assert_eq!(clean_removal(&tied, 50.0).unwrap().ids, vec!["A"]);
        let empty = vec![("A".to_string(), vec![])];
        assert!(clean_removal(&empty, 50.0).is_err());
    }

    #[test]
    fn random_matches_clean_cardinality() {
        let ids: Vec<String> = (0..20).map(|i| format!("id{i}")).collect();
        let ex: Vec<(String, Vec<f64>)> = ids.iter().map(|i| (i.clone(), vec![0.5])).collect();
        let clean = clean_removal(&ex, 20.0).unwrap();
        let random = random_removal(&ids, clean.len(), 20.0, 42).unwrap();
        assert_eq!(random.len(), clean.len());
        assert_eq!(random, random_removal(&ids, clean.len(), 20.0, 42).unwrap());
        assert!(random.ids.iter().all(|i| ids.contains(i)));
        assert!(random_removal(&ids, 21, 20.0, 1).is_err());
    }

    #[test]
    fn removal_set_text_roundtrip() {
        let set = RemovalSet {
            rule: SelectionRule::Clean,
            amount: 20.0,
            ids: vec!["a".into(), "b c".into()],
        };
        let text = set.to_text();
        assert!(text.starts_with("# rule=clean pct=20\n"));
        assert_eq!(RemovalSet::from_text(&text).unwrap(), set);
        assert!(RemovalSet::from_text("a\nb\n").is_err());
    }

    fn streams(n: usize) -> (Vec<(String, f64)>, BTreeMap<String, f64>) {
        let faith = (0..n).map(|i| (format!("id{i}"), ((i * 37) % n) as f64 / n as f64)).collect();
        let sim = (0..n).map(|i| (format!("id{i}"), ((i * 11) % n) as f64 / n as f64)).collect();
        (faith, sim)
    }

    #[test]
    fn test_faith_counts() {
        let (f, s) = streams(10);
        let keep = select_test_faith(&f, &s, 0.1).unwrap();
        assert_eq!(keep.len(), 1);
        let best = f
            .iter()
            .max_by(|a, b| {
                let ca = a.1 / 0.9 + s[&a.0] / 0.9;
                let cb = b.1 / 0.9 + s[&b.0] / 0.9;
                ca.total_cmp(&cb)
            })
            .unwrap();
        assert_eq!(keep.ids, vec![best.0.clone()]);

        let (f, s) = streams(7000);
        assert_eq!(select_test_faith(&f, &s, 0.1).unwrap().len(), 700);
    }

    #[test]
    fn test_faith_constant_stream() {
        let f: Vec<(String, f64)> = (0..5).map(|i| (format!("id{i}"), 0.3)).collect();
        let s: BTreeMap<String, f64> = (0..5).map(|i| (format!("id{i}"), [0.1, 0.9, 0.5, 0.2, 0.4][i])).collect();
        let keep = select_test_faith(&f, &s, 0.4).unwrap();
        assert_eq!(keep.ids, vec!["id1", "id2"]);
    }

    #[test]
    fn test_faith_errors() {
        let (f, mut s) = streams(5);
        assert!(select_test_faith(&f, &s, 0.0).is_err());
        assert!(select_test_faith(&f, &s, 1.5).is_err());
        s.remove("id0");
        s.insert("other".into(), 0.1);
        assert!(select_test_faith(&f, &s, 0.5).is_err());
    }

    #[test]
    fn bow_cosine() {
        let b = BagOfWordsCosine;
        assert!((b.similarity("a b c", "c b a") - 1.0).abs() < 1e-12);
        assert_eq!(b.similarity("a b", "c d"), 0.0);
        assert_eq!(b.similarity("", "c d"), 0.0);
    }

    proptest! {
        #[test]
        fn threshold_count_exact(scores in prop::collection::vec(0.0f64..1.0, 1..60), pct in 0.0f64..=100.0) {
            let s: Vec<_> = scores.iter().enumerate().map(|(i, &x)| SentenceScore::new("x", i, x)).collect();
            let a = annotate_threshold(&s, pct).unwrap();
            prop_assert_eq!(no_count(&a), fraction_count(pct, s.len()));
        }

        #[test]
        fn raising_a_score_never_flips_yes_to_no(
            scores in prop::collection::vec(0.0f64..1.0, 2..30),
            pct in 0.0f64..=100.0,
            idx in any::<prop::sample::Index>(),
            bump in 0.0f64..1.0,
        ) {
            let s: Vec<_> = scores.iter().enumerate().map(|(i, &x)| SentenceScore::new("x", i, x)).collect();
            let i = idx.index(s.len());
            let before = annotate_threshold(&s, pct).unwrap()[i].label;
            let mut raised = s.clone();
            raised[i].score += bump;
            let after = annotate_threshold(&raised, pct).unwrap()[i].label;
            prop_assert!(!(before == FaithLabel::Yes && after == FaithLabel::No));
        }

        #[test]
        fn test_faith_affine_invariant(
            raw in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0), 2..40),
            a in 0.1f64..10.0, b in -3.0f64..3.0, c in 0.1f64..10.0, d in -3.0f64..3.0,
        ) {
            let f: Vec<(String, f64)> = raw.iter().enumerate().map(|(i, x)| (format!("{i}"), x.0)).collect();
            let s: BTreeMap<String, f64> = raw.iter().enumerate().map(|(i, x)| (format!("{i}"), x.1)).collect();
            let f2: Vec<(String, f64)> = f.iter().map(|(k, v)| (k.clone(), a * v + b)).collect();
            let s2: BTreeMap<String, f64> = s.iter().map(|(k, v)| (k.clone(), c * v + d)).collect();
            // rounding can only reorder near-ties, so require distinct combined scores
            let nf = min_max_normalize(&raw.iter().map(|x| x.0).collect::<Vec<_>>());
            let ns = min_max_normalize(&raw.iter().map(|x| x.1).collect::<Vec<_>>());
            let mut combined: Vec<f64> = nf.iter().zip(&ns).map(|(x, y)| x + y).collect();
            combined.sort_by(f64::total_cmp);
            prop_assume!(combined.windows(2).all(|w| w[1] - w[0] > 1e-9));
            let base = select_test_faith(&f, &s, 0.25).unwrap();
            let moved = select_test_faith(&f2, &s2, 0.25).unwrap();
            prop_assert_eq!(base.len(), moved.len());
            prop_assert_eq!(base.ids, moved.ids);
        }
    }
}
