use sha2::{Digest, Sha256};

use super::{NliDistribution, NliScorer, ScorePair};
use crate::error::Result;

/// Entailment probability assigned to planted pairs lies in `[PLANTED_FLOOR, PLANTED_FLOOR + 0.07)`.
const PLANTED_FLOOR: f64 = 0.92;

fn unit(bytes: &[u8]) -> f64 {
    let mut word = [0u8; 8];
    word.copy_from_slice(&bytes[..8]);
    // 53 random mantissa bits -> [0, 1)
    (u64::from_le_bytes(word) >> 11) as f64 / (1u64 << 53) as f64
}

fn softmax(logits: [f64; 3]) -> [f64; 3] {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps = logits.map(|z| (z - max).exp());
    let total: f64 = exps.iter().sum();
    exps.map(|e| e / total)
}

/// Deterministic pseudo-NLI distribution.
///
/// Hashes `(seed, premise, hypothesis)` into three logits in `[-1, 1]` and
/// applies softmax, so the entailment probability of an ordinary pair stays
/// below `e / (e + 2/e) ≈ 0.787`. When the hypothesis occurs verbatim inside
/// the premise, entailment is lifted above 0.92 and the remaining mass is
/// shared between neutral and contradiction in the hashed proportions.
pub fn mock_score(premise: &str, hypothesis: &str, seed: u64) -> NliDistribution {
    let (probs, u0) = hashed_probs(premise, hypothesis, seed);
    let planted = !hypothesis.is_empty() && premise.contains(hypothesis);
    if planted {
        let entailment = PLANTED_FLOOR + 0.07 * u0;
        let rest = 1.0 - entailment;
        let share = probs[1] / (probs[1] + probs[2]);
        let neutral = rest * share;
        NliDistribution {
            entailment,
            neutral,
            contradiction: rest - neutral,
        }
    } else {
        to_distribution(probs)
    }
}

fn to_distribution(probs: [f64; 3]) -> NliDistribution {
    NliDistribution {
        entailment: probs[0],
        neutral: probs[1],
        contradiction: probs[2],
    }
}

fn hashed_probs(premise: &str, hypothesis: &str, seed: u64) -> ([f64; 3], f64) {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update((premise.len() as u64).to_le_bytes());
    h.update(premise.as_bytes());
    h.update((hypothesis.len() as u64).to_le_bytes());
    h.update(hypothesis.as_bytes());
    let digest = h.finalize();
    let u = [unit(&digest[0..8]), unit(&digest[8..16]), unit(&digest[16..24])];
    (softmax(u.map(|x| 2.0 * x - 1.0)), u[0])
}

/// Offline scorer built on [`mock_score`].
#[derive(Debug, Clone)]
pub struct MockScorer {
    seed: u64,
    planted: bool,
    id: String,
}

impl MockScorer {
    /// Mock with the substring planted-signal rule enabled.
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            planted: true,
            id: format!("mock@seed={seed}"),
        }
    }

    /// Purely hash-driven mock: no pair receives the planted boost, so scores
    /// carry no information about the text.
    pub fn uniform(seed: u64) -> Self {
        Self {
            seed,
            planted: false,
            id: format!("mock-uniform@seed={seed}"),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

impl NliScorer for MockScorer {
    fn scorer_id(&self) -> &str {
        &self.id
    }

    fn score_pairs(&self, pairs: &[ScorePair]) -> Result<Vec<NliDistribution>> {
        Ok(pairs
            .iter()
            .map(|p| {
                if self.planted {
                    mock_score(&p.premise, &p.hypothesis, self.seed)
                } else {
                    to_distribution(hashed_probs(&p.premise, &p.hypothesis, self.seed).0)
                }
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn deterministic() {
        let a = mock_score("the premise", "a hypothesis", 7);
        let b = mock_score("the premise", "a hypothesis", 7);
        assert_eq!(a.entailment.to_bits(), b.entailment.to_bits());
        assert_eq!(a.neutral.to_bits(), b.neutral.to_bits());
        assert_eq!(a.contradiction.to_bits(), b.contradiction.to_bits());
    }

    #[test]
    fn planted_substring() {
        let d = mock_score("a b c d", "b c", 7);
        assert!(d.entailment > 0.9, "{d:?}");
        d.validate().unwrap();
    }

    #[test]
    fn hypotheses_differ() {
        assert_ne!(mock_score("p", "h1", 7), mock_score("p", "h2", 7));
        assert_ne!(mock_score("p", "h1", 7), mock_score("p", "h1", 8));
    }

    #[test]
    fn uniform_mock_ignores_substrings() {
        let s = MockScorer::uniform(1);
        let d = s.score_pairs(&[ScorePair::new("a b c d", "b c")]).unwrap()[0];
        assert!(d.entailment < 0.8);
    }

    proptest! {
        #[test]
        fn valid_full_support(p in ".{0,40}", h in ".{0,20}", seed in any::<u64>()) {
            let d = mock_score(&p, &h, seed);
            d.validate().unwrap();
            prop_assert!(d.entailment > 0.0 && d.neutral > 0.0 && d.contradiction > 0.0);
            if !h.is_empty() && !p.contains(h.as_str()) {
                prop_assert!(d.entailment < 0.79);
            }
        }
    }
}
