//! Evaluation of faithfulness scores against human judgements.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::BufRead;

use serde::{Deserialize, Serialize};

use crate::aggregate::Strategy;
use crate::error::{Error, Result};

/// One annotator's answer to "is this summary sentence supported?".
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Judgement {
    No,
    Partial,
    Yes,
}

impl Judgement {
    pub fn value(self) -> u32 {
        match self {
            Judgement::No => 0,
            Judgement::Partial => 1,
            Judgement::Yes => 2,
        }
    }

    /// Binary view used for agreement: partial counts as yes.
    pub fn is_supported(self) -> bool {
        self != Judgement::No
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GoldLabel {
    Entail,
    NotEntail,
}

/// Sums the three judgements (no=0, partial=1, yes=2). A sum of 0..=2 is
/// `NotEntail`, 3..=6 is `Entail`.
pub fn aggregate_judgements(judgements: &[Judgement]) -> Result<GoldLabel> {
    if judgements.len() != 3 {
        return Err(Error::validation(format!(
            "expected exactly 3 judgements, got {}",
            judgements.len()
        )));
    }
    let sum: u32 = judgements.iter().map(|j| j.value()).sum();
    Ok(if sum >= 3 {
        GoldLabel::Entail
    } else {
        GoldLabel::NotEntail
    })
}

/// Area under the ROC curve with `Entail` as the positive class.
///
/// Computed through the Mann-Whitney U statistic with mid-ranks, which equals
/// the fraction of (positive, negative) pairs ordered correctly with ties
/// counted as one half.
pub fn roc_auc(scores: &[f64], labels: &[GoldLabel]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::validation(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::validation("NaN score"));
    }
    let n_pos = labels.iter().filter(|&&l| l == GoldLabel::Entail).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric(
            "ROC-AUC needs at least one entail and one not_entail item".into(),
        ));
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut pos_rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 share their mean
        let mid = (i + j + 2) as f64 / 2.0;
        let pos_in_group = order[i..=j]
            .iter()
            .filter(|&&k| labels[k] == GoldLabel::Entail)
            .count();
        pos_rank_sum += mid * pos_in_group as f64;
        i = j + 1;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    let u = pos_rank_sum - p * (p + 1.0) / 2.0;
    Ok(u / (p * n))
}

/// Fleiss' kappa for items rated by the same number of raters.
///
/// `counts[i][j]` is how many raters put item `i` in category `j`.
pub fn fleiss_kappa<C: AsRef<[usize]>>(counts: &[C]) -> Result<f64> {
    let Some(first) = counts.first() else {
        return Err(Error::validation("fleiss kappa needs at least one item"));
    };
    let categories = first.as_ref().len();
    let raters: usize = first.as_ref().iter().sum();
    if raters < 2 {
        return Err(Error::validation("fleiss kappa needs at least two raters per item"));
    }
    for (i, item) in counts.iter().enumerate() {
        let item = item.as_ref();
        if item.len() != categories || item.iter().sum::<usize>() != raters {
            return Err(Error::validation(format!(
                "item {i} does not have {raters} ratings over {categories} categories"
            )));
        }
    }
    let n = raters as f64;
    let items = counts.len() as f64;
    let p_bar = counts
        .iter()
        .map(|item| {
            let sq: usize = item.as_ref().iter().map(|c| c * c).sum();
            (sq as f64 - n) / (n * (n - 1.0))
        })
        .sum::<f64>()
        / items;
    let p_e: f64 = (0..categories)
        .map(|j| {
            let pj = counts.iter().map(|item| item.as_ref()[j]).sum::<usize>() as f64 / (items * n);
            pj * pj
        })
        .sum();
    if (1.0 - p_e).abs() < 1e-15 {
        return Err(Error::UndefinedMetric(
            "fleiss kappa is undefined when every rating falls in one category".into(),
        ));
    }
    Ok((p_bar - p_e) / (1.0 - p_e))
}

/// Per-item `[supported, not supported]` counts, partial counting as supported.
pub fn binary_counts(items: &[[Judgement; 3]]) -> Vec<[usize; 2]> {
    items
        .iter()
        .map(|js| {
            let yes = js.iter().filter(|j| j.is_supported()).count();
            [yes, js.len() - yes]
        })
        .collect()
}

pub fn accuracy<T: PartialEq>(predictions: &[T], gold: &[T]) -> Result<f64> {
    if predictions.len() != gold.len() {
        return Err(Error::validation(format!(
            "{} predictions but {} gold labels",
            predictions.len(),
            gold.len()
        )));
    }
    if gold.is_empty() {
        return Err(Error::validation("accuracy of zero items"));
    }
    let hits = predictions.iter().zip(gold).filter(|(p, g)| p == g).count();
    Ok(hits as f64 / gold.len() as f64)
}

/// One human-annotated summary sentence with strategy scores attached.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkRecord {
    pub id: String,
    pub sent_idx: usize,
    pub lang_pair: String,
    pub judgements: [Judgement; 3],
    pub gold: GoldLabel,
    pub scores: BTreeMap<String, f64>,
}

#[derive(Deserialize)]
struct RecordLine {
    id: String,
    sent_idx: usize,
    judgements: Vec<Judgement>,
    scores: BTreeMap<String, f64>,
    #[serde(default)]
    lang_pair: Option<String>,
}

impl BenchmarkRecord {
    pub fn new(
        id: impl Into<String>,
        sent_idx: usize,
        lang_pair: impl Into<String>,
        judgements: [Judgement; 3],
        scores: BTreeMap<String, f64>,
    ) -> Result<Self> {
        for (name, s) in &scores {
            if !(0.0..=1.0).contains(s) {
                return Err(Error::validation(format!("score {name}={s} outside [0, 1]")));
            }
        }
        Ok(Self {
            id: id.into(),
            sent_idx,
            lang_pair: lang_pair.into(),
            gold: aggregate_judgements(&judgements)?,
            judgements,
            scores,
        })
    }
}

/// Reads benchmark JSONL. Records without a `lang_pair` field get
/// `default_lang_pair`.
pub fn parse_benchmark<R: BufRead>(reader: R, default_lang_pair: &str) -> Result<Vec<BenchmarkRecord>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse { line: i + 1, message };
        let rec: RecordLine = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        let judgements: [Judgement; 3] = rec
            .judgements
            .as_slice()
            .try_into()
            .map_err(|_| parse_err(format!("expected 3 judgements, got {}", rec.judgements.len())))?;
        let lang = rec.lang_pair.unwrap_or_else(|| default_lang_pair.to_string());
        out.push(
            BenchmarkRecord::new(rec.id, rec.sent_idx, lang, judgements, rec.scores)
                .map_err(|e| parse_err(e.to_string()))?,
        );
    }
    Ok(out)
}

/// ROC-AUC per (strategy, language pair), plus agreement and counts.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkReport {
    pub lang_pairs: Vec<String>,
    pub strategies: Vec<String>,
    /// `None` marks a degenerate cell (no scores, or a single gold class).
    pub auc: BTreeMap<(String, String), Option<f64>>,
    pub kappa: BTreeMap<String, Option<f64>>,
    pub not_entail_fraction: BTreeMap<String, f64>,
    pub counts: BTreeMap<String, usize>,
}

fn strategy_order(name: &str) -> (usize, String) {
    let pos = Strategy::ALL
        .iter()
        .position(|s| s.as_str() == name)
        .unwrap_or(Strategy::ALL.len());
    (pos, name.to_string())
}

pub fn benchmark_strategies(records: &[BenchmarkRecord]) -> BenchmarkReport {
    let lang_pairs: Vec<String> = records
        .iter()
        .map(|r| r.lang_pair.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut strategies: Vec<String> = records
        .iter()
        .flat_map(|r| r.scores.keys().cloned())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    strategies.sort_by_key(|s| strategy_order(s));

    let mut auc = BTreeMap::new();
    let mut kappa = BTreeMap::new();
    let mut not_entail_fraction = BTreeMap::new();
    let mut counts = BTreeMap::new();
    for lang in &lang_pairs {
        let subset: Vec<&BenchmarkRecord> = records.iter().filter(|r| &r.lang_pair == lang).collect();
        counts.insert(lang.clone(), subset.len());
        let neg = subset.iter().filter(|r| r.gold == GoldLabel::NotEntail).count();
        not_entail_fraction.insert(lang.clone(), neg as f64 / subset.len() as f64);
        let items: Vec<[Judgement; 3]> = subset.iter().map(|r| r.judgements).collect();
        kappa.insert(lang.clone(), fleiss_kappa(&binary_counts(&items)).ok());
        for strategy in &strategies {
            let (scores, labels): (Vec<f64>, Vec<GoldLabel>) = subset
                .iter()
                .filter_map(|r| r.scores.get(strategy).map(|&s| (s, r.gold)))
                .unzip();
            auc.insert((strategy.clone(), lang.clone()), roc_auc(&scores, &labels).ok());
        }
    }
    BenchmarkReport {
        lang_pairs,
        strategies,
        auc,
        kappa,
        not_entail_fraction,
        counts,
    }
}

fn cell(v: Option<f64>, scale: f64) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{:.2}", x * scale))
}

impl BenchmarkReport {
    pub fn total(&self) -> usize {
        self.counts.values().sum()
    }

    pub fn get(&self, strategy: &str, lang_pair: &str) -> Option<f64> {
        self.auc
            .get(&(strategy.to_string(), lang_pair.to_string()))
            .copied()
            .flatten()
    }

    /// Mean AUC over the language pairs where it is defined.
    pub fn average(&self, strategy: &str) -> Option<f64> {
        let vals: Vec<f64> = self.lang_pairs.iter().filter_map(|l| self.get(strategy, l)).collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }

    /// Strategies as rows, language pairs as columns, AUC ×100, then agreement
    /// and count rows. The count row's `Avg` column holds the total.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "strategy\t{}\tAvg", self.lang_pairs.join("\t"));
        for s in &self.strategies {
            let cells: Vec<String> = self.lang_pairs.iter().map(|l| cell(self.get(s, l), 100.0)).collect();
            let _ = writeln!(out, "{s}\t{}\t{}", cells.join("\t"), cell(self.average(s), 100.0));
        }
        let pct: Vec<String> = self
            .lang_pairs
            .iter()
            .map(|l| cell(self.not_entail_fraction.get(l).copied(), 100.0))
            .collect();
        let _ = writeln!(out, "%not_entail\t{}\t", pct.join("\t"));
        let kap: Vec<String> = self
            .lang_pairs
            .iter()
            .map(|l| cell(self.kappa.get(l).copied().flatten(), 1.0))
            .collect();
        let _ = writeln!(out, "fleiss_kappa\t{}\t", kap.join("\t"));
        let ns: Vec<String> = self.lang_pairs.iter().map(|l| self.counts[l].to_string()).collect();
        let _ = writeln!(out, "n\t{}\t{}", ns.join("\t"), self.total());
        let _ = writeln!(out, "# total n={}", self.total());
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use proptest::strategy::Strategy;
    use Judgement::*;

    const E: GoldLabel = GoldLabel::Entail;
    const N: GoldLabel = GoldLabel::NotEntail;

    /// Exhaustive pairwise statistic.
    fn brute_auc(scores: &[f64], labels: &[GoldLabel]) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for (i, li) in labels.iter().enumerate() {
            for (j, lj) in labels.iter().enumerate() {
                if *li == E && *lj == N {
                    den += 1.0;
                    if scores[i] > scores[j] {
                        num += 1.0;
                    } else if scores[i] == scores[j] {
                        num += 0.5;
                    }
                }
            }
        }
        num / den
    }

    #[test]
    fn judgement_examples() {
        assert_eq!(aggregate_judgements(&[Yes, Yes, Yes]).unwrap(), E);
        assert_eq!(aggregate_judgements(&[No, No, No]).unwrap(), N);
        assert_eq!(aggregate_judgements(&[No, Partial, Yes]).unwrap(), E);
        assert_eq!(aggregate_judgements(&[No, No, Yes]).unwrap(), N);
        assert!(aggregate_judgements(&[Yes, Yes]).is_err());
        assert!(aggregate_judgements(&[Yes; 4]).is_err());
    }

    #[test]
    fn auc_examples() {
        assert_eq!(roc_auc(&[0.9, 0.8, 0.3, 0.2], &[E, E, N, N]).unwrap(), 1.0);
        assert_eq!(roc_auc(&[0.5, 0.5], &[E, N]).unwrap(), 0.5);
        assert_eq!(roc_auc(&[0.1, 0.4, 0.35, 0.8], &[N, N, E, E]).unwrap(), 0.75);
        assert_eq!(brute_auc(&[0.1, 0.4, 0.35, 0.8], &[N, N, E, E]), 0.75);
        assert!(matches!(roc_auc(&[0.1, 0.2], &[E, E]), Err(Error::UndefinedMetric(_))));
        assert!(roc_auc(&[0.1], &[E, N]).is_err());
    }

    #[test]
    fn kappa_worked_value() {
        let items = binary_counts(&[[Yes, Yes, No], [No, No, No]]);
        assert_eq!(items, vec![[2, 1], [0, 3]]);
        assert!((fleiss_kappa(&items).unwrap() - 0.25).abs() < 1e-12);
    }

    #[test]
    fn kappa_unanimous_and_degenerate() {
        let items = binary_counts(&[[Yes, Partial, Yes], [No, No, No], [No, No, No]]);
        assert_eq!(fleiss_kappa(&items).unwrap(), 1.0);
        let all_no = binary_counts(&[[No, No, No], [No, No, No]]);
        assert!(matches!(fleiss_kappa(&all_no), Err(Error::UndefinedMetric(_))));
        assert!(fleiss_kappa::<[usize; 2]>(&[]).is_err());
        assert!(fleiss_kappa(&[[1usize, 0]]).is_err());
        assert!(fleiss_kappa(&[vec![2usize, 1], vec![1, 1]]).is_err());
    }

    #[test]
    fn kappa_random_ratings_near_zero() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let items: Vec<[usize; 2]> = (0..10_000)
            .map(|_| {
                let yes = (0..3).filter(|_| rng.random_bool(0.5)).count();
                [yes, 3 - yes]
            })
            .collect();
        assert!(fleiss_kappa(&items).unwrap().abs() < 0.05);
    }

    #[test]
    fn accuracy_examples() {
        assert_eq!(accuracy(&[1, 2, 3, 4], &[1, 2, 3, 0]).unwrap(), 0.75);
        assert_eq!(accuracy(&["a", "b"], &["a", "b"]).unwrap(), 1.0);
        assert_eq!(accuracy(&[1, 2], &[3, 4]).unwrap(), 0.0);
        assert!(accuracy(&[1], &[1, 2]).is_err());
        assert!(accuracy::<u8>(&[], &[]).is_err());
    }

    fn rec(id: &str, lang: &str, js: [Judgement; 3], scores: &[(&str, f64)]) -> BenchmarkRecord {
        let scores = scores.iter().map(|(k, v)| (k.to_string(), *v)).collect();
        BenchmarkRecord::new(id, 0, lang, js, scores).unwrap()
    }

    #[test]
    fn report_layout_and_na_cells() {
        let records = vec![
            rec("a", "de-en", [Yes, Yes, Yes], &[("infuse", 0.9), ("fulldoc", 0.2)]),
            rec("b", "de-en", [No, No, No], &[("infuse", 0.1), ("fulldoc", 0.4)]),
            rec("c", "fr-en", [Yes, Yes, No], &[("infuse", 0.5)]),
            rec("d", "fr-en", [No, No, Partial], &[("infuse", 0.6)]),
            rec("e", "zh-en", [Yes, Yes, Yes], &[("infuse", 0.6)]),
        ];
        let report = benchmark_strategies(&records);
        assert_eq!(report.strategies, vec!["fulldoc", "infuse"]);
        assert_eq!(report.get("infuse", "de-en"), Some(1.0));
        assert_eq!(report.get("fulldoc", "de-en"), Some(0.0));
        assert_eq!(report.get("infuse", "fr-en"), Some(0.0));
        assert_eq!(report.get("fulldoc", "fr-en"), None);
        assert_eq!(report.get("infuse", "zh-en"), None);
        assert_eq!(report.average("infuse"), Some(0.5));
        let tsv = report.to_tsv();
        let lines: Vec<&str> = tsv.lines().collect();
        assert_eq!(lines[0], "strategy\tde-en\tfr-en\tzh-en\tAvg");
        assert_eq!(lines[1], "fulldoc\t0.00\tn/a\tn/a\t0.00");
        assert_eq!(lines[2], "infuse\t100.00\t0.00\tn/a\t50.00");
        assert!(tsv.contains("n\t2\t2\t1\t5"));
        assert!(tsv.contains("# total n=5"));
    }

    #[test]
    fn parse_benchmark_lines() {
        let input = r#"{"id":"a","sent_idx":0,"judgements":["yes","partial","no"],"scores":{"infuse":0.7}}
{"id":"a","sent_idx":1,"judgements":["no","no","partial"],"scores":{"infuse":0.2},"lang_pair":"fr-en"}"#;
        let recs = parse_benchmark(input.as_bytes(), "de-en").unwrap();
        assert_eq!(recs[0].gold, E);
        assert_eq!(recs[0].lang_pair, "de-en");
        assert_eq!(recs[1].gold, N);
        assert_eq!(recs[1].lang_pair, "fr-en");
        let bad = r#"{"id":"a","sent_idx":0,"judgements":["yes"],"scores":{}}"#;
        assert!(matches!(parse_benchmark(bad.as_bytes(), "x"), Err(Error::Parse { line: 1, .. })));
        let bad = r#"{"id":"a","sent_idx":0,"judgements":["yes","yes","yes"],"scores":{"s":1.5}}"#;
        assert!(parse_benchmark(bad.as_bytes(), "x").is_err());
    }

    fn labelled() -> impl Strategy<Value = (Vec<f64>, Vec<GoldLabel>)> {
        (2usize..=12).prop_flat_map(|n| {
            (
                prop::collection::vec((0u8..5).prop_map(|v| v as f64 / 4.0), n),
                prop::collection::vec(any::<bool>().prop_map(|b| if b { E } else { N }), n),
            )
        })
    }

    proptest! {
        #[test]
        fn auc_matches_brute_force((scores, labels) in labelled()) {
            prop_assume!(labels.contains(&E) && labels.contains(&N));
            let fast = roc_auc(&scores, &labels).unwrap();
            prop_assert!((fast - brute_auc(&scores, &labels)).abs() <= 1e-12);
        }

        #[test]
        fn auc_rank_invariant((scores, labels) in labelled(), a in 0.1f64..10.0, b in -5.0f64..5.0) {
            prop_assume!(labels.contains(&E) && labels.contains(&N));
            let shifted: Vec<f64> = scores.iter().map(|s| a * s + b).collect();
            let base = roc_auc(&scores, &labels).unwrap();
            prop_assert!((roc_auc(&shifted, &labels).unwrap() - base).abs() < 1e-12);
            let neg: Vec<f64> = scores.iter().map(|s| -s).collect();
            let flipped: Vec<GoldLabel> = labels.iter().map(|l| if *l == E { N } else { E }).collect();
            prop_assert!((roc_auc(&neg, &flipped).unwrap() - base).abs() < 1e-12);
        }

        #[test]
        fn judgement_permutation_invariant(a in 0usize..3, b in 0usize..3, c in 0usize..3) {
            let all = [No, Partial, Yes];
            let (a, b, c) = (all[a], all[b], all[c]);
            let base = aggregate_judgements(&[a, b, c]).unwrap();
            for perm in [[a, c, b], [b, a, c], [b, c, a], [c, a, b], [c, b, a]] {
                prop_assert_eq!(aggregate_judgements(&perm).unwrap(), base);
            }
        }
    }
}
