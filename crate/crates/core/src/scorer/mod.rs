//! Entailment scoring backends.
//!
//! Every backend implements [`NliScorer`]. Callers should go through
//! [`score_batch`], which checks positional alignment and validates every
//! returned distribution regardless of where it came from.

use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use crate::corpus::NliLabel;
use crate::error::{Error, Result};

mod cache;
mod mock;
mod remote;

pub use cache::{CachedScorer, ScoreCache, ScoreCacheKey, CACHE_VERSION};
pub use mock::{mock_score, MockScorer};
pub use remote::{Health, RemoteScorer, RemoteScorerConfig};

/// Components must each be in `[0, 1]` and sum to one within this tolerance.
pub const DISTRIBUTION_TOLERANCE: f64 = 1e-6;

/// Probabilities of the three NLI classes for one premise/hypothesis pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NliDistribution {
    pub entailment: f64,
    pub neutral: f64,
    pub contradiction: f64,
}

impl NliDistribution {
    pub fn new(entailment: f64, neutral: f64, contradiction: f64) -> Result<Self> {
        let d = Self {
            entailment,
            neutral,
            contradiction,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        let parts = [self.entailment, self.neutral, self.contradiction];
        if parts.iter().any(|p| !p.is_finite() || *p < 0.0 || *p > 1.0) {
            return Err(Error::validation(format!(
                "distribution component outside [0, 1]: {self:?}"
            )));
        }
        let sum: f64 = parts.iter().sum();
        if (sum - 1.0).abs() > DISTRIBUTION_TOLERANCE {
            return Err(Error::validation(format!(
                "distribution sums to {sum}, not 1: {self:?}"
            )));
        }
        Ok(())
    }

    pub fn prob(&self, label: NliLabel) -> f64 {
        match label {
            NliLabel::Entailment => self.entailment,
            NliLabel::Neutral => self.neutral,
            NliLabel::Contradiction => self.contradiction,
        }
    }

    /// Most probable class; ties resolve in the order entailment, neutral,
    /// contradiction.
    pub fn argmax(&self) -> NliLabel {
        let mut best = NliLabel::Entailment;
        for label in [NliLabel::Neutral, NliLabel::Contradiction] {
            if self.prob(label) > self.prob(best) {
                best = label;
            }
        }
        best
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ScorePair {
    pub premise: String,
    pub hypothesis: String,
}

impl ScorePair {
    pub fn new(premise: impl Into<String>, hypothesis: impl Into<String>) -> Self {
        Self {
            premise: premise.into(),
            hypothesis: hypothesis.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreBatch {
    pub id: u64,
    pub pairs: Vec<ScorePair>,
}

impl ScoreBatch {
    pub fn new(id: u64, pairs: Vec<ScorePair>) -> Self {
        Self { id, pairs }
    }
}

/// A backend mapping premise/hypothesis pairs to NLI distributions.
///
/// Implementations must be usable from several threads at once.
pub trait NliScorer: Send + Sync {
    /// Names the model and revision. Used in cache keys and run manifests.
    fn scorer_id(&self) -> &str;

    /// Scores pairs positionally. Prefer [`score_batch`], which validates.
    fn score_pairs(&self, pairs: &[ScorePair]) -> Result<Vec<NliDistribution>>;
}

impl<S: NliScorer + ?Sized> NliScorer for &S {
    fn scorer_id(&self) -> &str {
        (**self).scorer_id()
    }
    fn score_pairs(&self, pairs: &[ScorePair]) -> Result<Vec<NliDistribution>> {
        (**self).score_pairs(pairs)
    }
}

impl<S: NliScorer + ?Sized> NliScorer for Box<S> {
    fn scorer_id(&self) -> &str {
        (**self).scorer_id()
    }
    fn score_pairs(&self, pairs: &[ScorePair]) -> Result<Vec<NliDistribution>> {
        (**self).score_pairs(pairs)
    }
}

pub(crate) fn check_pairs(pairs: &[ScorePair]) -> Result<()> {
    for (i, p) in pairs.iter().enumerate() {
        if p.premise.trim().is_empty() || p.hypothesis.trim().is_empty() {
            return Err(Error::validation(format!("pair {i} has an empty premise or hypothesis")));
        }
    }
    Ok(())
}

/// Scores a non-empty batch and validates the result.
pub fn score_batch<S: NliScorer + ?Sized>(scorer: &S, batch: &ScoreBatch) -> Result<Vec<NliDistribution>> {
    if batch.pairs.is_empty() {
        return Err(Error::validation(format!("batch {} is empty", batch.id)));
    }
    score_pairs_checked(scorer, &batch.pairs)
}

pub(crate) fn score_pairs_checked<S: NliScorer + ?Sized>(
    scorer: &S,
    pairs: &[ScorePair],
) -> Result<Vec<NliDistribution>> {
    if pairs.is_empty() {
        return Ok(Vec::new());
    }
    check_pairs(pairs)?;
    let out = scorer.score_pairs(pairs)?;
    if out.len() != pairs.len() {
        return Err(Error::Protocol(format!(
            "scorer {} returned {} distributions for {} pairs",
            scorer.scorer_id(),
            out.len(),
            pairs.len()
        )));
    }
    for (i, d) in out.iter().enumerate() {
        d.validate().map_err(|e| e.context(format!("pair {i}")))?;
    }
    Ok(out)
}

/// Scores a single pair through [`score_batch`].
pub fn score_one<S: NliScorer + ?Sized>(scorer: &S, premise: &str, hypothesis: &str) -> Result<NliDistribution> {
    let pairs = [ScorePair::new(premise, hypothesis)];
    Ok(score_pairs_checked(scorer, &pairs)?[0])
}

/// Wraps a scorer and counts how many pairs reach it.
pub struct CountingScorer<S> {
    inner: S,
    pairs: AtomicUsize,
    calls: AtomicUsize,
}

impl<S: NliScorer> CountingScorer<S> {
    pub fn new(inner: S) -> Self {
        Self {
            inner,
            pairs: AtomicUsize::new(0),
            calls: AtomicUsize::new(0),
        }
    }

    /// Number of individual pairs forwarded to the inner scorer.
    pub fn pair_count(&self) -> usize {
        self.pairs.load(Ordering::SeqCst)
    }

    /// Number of `score_pairs` invocations forwarded.
    pub fn call_count(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn into_inner(self) -> S {
        self.inner
    }
}

impl<S: NliScorer> NliScorer for CountingScorer<S> {
    fn scorer_id(&self) -> &str {
        self.inner.scorer_id()
    }

    fn score_pairs(&self, pairs: &[ScorePair]) -> Result<Vec<NliDistribution>> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.pairs.fetch_add(pairs.len(), Ordering::SeqCst);
        self.inner.score_pairs(pairs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Broken(Vec<NliDistribution>);

    impl NliScorer for Broken {
        fn scorer_id(&self) -> &str {
            "broken"
        }
        fn score_pairs(&self, _pairs: &[ScorePair]) -> Result<Vec<NliDistribution>> {
            Ok(self.0.clone())
        }
    }

    #[test]
    fn distribution_validation() {
        assert!(NliDistribution::new(0.2, 0.3, 0.5).is_ok());
        assert!(NliDistribution::new(0.2, 0.3, 0.6).is_err());
        assert!(NliDistribution::new(-0.1, 0.6, 0.5).is_err());
        assert!(NliDistribution::new(f64::NAN, 0.5, 0.5).is_err());
    }

    #[test]
    fn argmax_ties_prefer_entailment() {
        let d = NliDistribution::new(0.4, 0.4, 0.2).unwrap();
        assert_eq!(d.argmax(), NliLabel::Entailment);
        let d = NliDistribution::new(0.1, 0.2, 0.7).unwrap();
        assert_eq!(d.argmax(), NliLabel::Contradiction);
    }

    #[test]
    fn empty_batch_rejected() {
        let s = MockScorer::new(1);
        assert!(score_batch(&s, &ScoreBatch::new(0, vec![])).is_err());
        let b = ScoreBatch::new(1, vec![ScorePair::new("", "h")]);
        assert!(matches!(score_batch(&s, &b), Err(Error::Validation(_))));
    }

    #[test]
    fn misaligned_backend_is_protocol_error() {
        let s = Broken(vec![]);
        let b = ScoreBatch::new(0, vec![ScorePair::new("p", "h")]);
        assert!(matches!(score_batch(&s, &b), Err(Error::Protocol(_))));
    }

    #[test]
    fn invalid_backend_distribution_is_validation_error() {
        let s = Broken(vec![NliDistribution {
            entailment: 0.9,
            neutral: 0.9,
            contradiction: 0.0,
        }]);
        let b = ScoreBatch::new(0, vec![ScorePair::new("p", "h")]);
        assert!(matches!(score_batch(&s, &b), Err(Error::Validation(_))));
    }

    #[test]
    fn counting_scorer_counts() {
        let s = CountingScorer::new(MockScorer::new(3));
        let b = ScoreBatch::new(0, vec![ScorePair::new("p", "h"), ScorePair::new("q", "h")]);
        score_batch(&s, &b).unwrap();
        assert_eq!(s.pair_count(), 2);
        assert_eq!(s.call_count(), 1);
    }
}
