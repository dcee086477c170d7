//! Reference implementations of the summarisation training objectives over
//! explicit logit tables, with analytic gradients.
//!
//! * MLE: `−Σ_t log p(y_t)`
//! * Mask: `−Σ_t F_t · log p(y_t)`
//! * Unlikelihood: `−Σ_t log p(y_t) − α · Σ_{t∈C} log(1 − p(y_t))`, where
//!   `C = {t : F_t = 0}` and each penalty uses timestep `t`'s own distribution.
//! * Literal unlikelihood: the printed double sum with a plus sign,
//!   `−Σ_t log p(y_t) + α · Σ_t Σ_{c∈V_C} log(1 − p_t(c))`, where `V_C` is
//!   the set of vocabulary ids targeted at unfaithful timesteps. Kept for
//!   comparison only; it rewards raising the probability of unfaithful tokens.
//!
//! Gradients are with respect to the logits.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `log(1 − p)` is evaluated with `p` clamped to at most `1 − 1e-12`.
pub const PROB_CLAMP: f64 = 1.0 - 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossInputs {
    logits: Vec<Vec<f64>>,
    targets: Vec<usize>,
    faithful: Vec<bool>,
    alpha: f64,
}

impl LossInputs {
    /// `logits` is `T × V`; `targets[t] < V`; `faithful[t]` is `F_t`.
    pub fn new(logits: Vec<Vec<f64>>, targets: Vec<usize>, faithful: Vec<bool>, alpha: f64) -> Result<Self> {
        let t = logits.len();
        if t == 0 {
            return Err(Error::validation("loss inputs need at least one timestep"));
        }
        let v = logits[0].len();
        if v == 0 || logits.iter().any(|row| row.len() != v) {
            return Err(Error::validation("logit rows must share a non-zero vocabulary size"));
        }
        if logits.iter().flatten().any(|z| !z.is_finite()) {
            return Err(Error::validation("logits must be finite"));
        }
        if targets.len() != t || faithful.len() != t {
            return Err(Error::validation(format!(
                "{t} timesteps but {} targets and {} faithfulness flags",
                targets.len(),
                faithful.len()
            )));
        }
        if let Some((i, y)) = targets.iter().enumerate().find(|(_, &y)| y >= v) {
            return Err(Error::validation(format!(
                "target {y} at timestep {i} is outside the vocabulary of {v}"
            )));
        }
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(Error::validation(format!("alpha {alpha} must be finite and non-negative")));
        }
        Ok(Self {
            logits,
            targets,
            faithful,
            alpha,
        })
    }

    /// Builds inputs whose softmax rows equal `probs` (via `log p`).
    pub fn from_probs(probs: &[Vec<f64>], targets: Vec<usize>, faithful: Vec<bool>, alpha: f64) -> Result<Self> {
        if probs.iter().flatten().any(|&p| !(p > 0.0)) {
            return Err(Error::validation("probabilities must be strictly positive"));
        }
        let logits = probs.iter().map(|row| row.iter().map(|p| p.ln()).collect()).collect();
        Self::new(logits, targets, faithful, alpha)
    }

    pub fn logits(&self) -> &[Vec<f64>] {
        &self.logits
    }

    pub fn targets(&self) -> &[usize] {
        &self.targets
    }

    pub fn faithful(&self) -> &[bool] {
        &self.faithful
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn timesteps(&self) -> usize {
        self.logits.len()
    }

    pub fn vocab(&self) -> usize {
        self.logits[0].len()
    }

    /// `C`: timesteps whose target is labelled unfaithful.
    pub fn unlikely_set(&self) -> Vec<usize> {
        (0..self.timesteps()).filter(|&t| !self.faithful[t]).collect()
    }

    pub fn with_logits(&self, logits: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(logits, self.targets.clone(), self.faithful.clone(), self.alpha)
    }

    pub fn with_alpha(&self, alpha: f64) -> Result<Self> {
        Self::new(self.logits.clone(), self.targets.clone(), self.faithful.clone(), alpha)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Mle,
    Mask,
    Unlike,
    UnlikeLiteral,
}

impl LossKind {
    pub const ALL: [LossKind; 4] = [LossKind::Mle, LossKind::Mask, LossKind::Unlike, LossKind::UnlikeLiteral];

    pub fn as_str(&self) -> &'static str {
        match self {
            LossKind::Mle => "mle",
            LossKind::Mask => "mask",
            LossKind::Unlike => "unlike",
            LossKind::UnlikeLiteral => "unlike_literal",
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// `total = mle + alpha · unlikelihood`. For Mask, `mle` is the masked
/// likelihood term and `unlikelihood` is zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossValue {
    pub total: f64,
    pub mle: f64,
    pub unlikelihood: f64,
}

fn log_softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    z.iter().map(|v| v - lse).collect()
}

fn clamp(p: f64) -> f64 {
    p.min(PROB_CLAMP)
}

/// Loss value and its gradient with respect to every logit.
pub fn loss_and_grad(kind: LossKind, inputs: &LossInputs) -> (LossValue, Vec<Vec<f64>>) {
    let alpha = inputs.alpha;
    let vocab = inputs.vocab();
    let logp: Vec<Vec<f64>> = inputs.logits.iter().map(|z| log_softmax(z)).collect();
    let probs: Vec<Vec<f64>> = logp.iter().map(|r| r.iter().map(|l| l.exp()).collect()).collect();
    let mut grad = vec![vec![0.0; vocab]; inputs.timesteps()];
    let mut mle = 0.0;
    let mut ul = 0.0;

    for (t, &y) in inputs.targets.iter().enumerate() {
        let weight = match kind {
            LossKind::Mask if !inputs.faithful[t] => continue,
            _ => 1.0,
        };
        mle -= logp[t][y];
        for (j, g) in grad[t].iter_mut().enumerate() {
            *g += weight * (probs[t][j] - if j == y { 1.0 } else { 0.0 });
        }
    }

    match kind {
        LossKind::Mle | LossKind::Mask => {}
        LossKind::Unlike => {
            for t in inputs.unlikely_set() {
                let y = inputs.targets[t];
                let q = clamp(probs[t][y]);
                ul -= (1.0 - q).ln();
                // d(−log(1−q))/dz_j = q (δ_jy − p_j) / (1 − q)
                for (j, g) in grad[t].iter_mut().enumerate() {
                    let delta = if j == y { 1.0 } else { 0.0 };
                    *g += alpha * q * (delta - probs[t][j]) / (1.0 - q);
                }
            }
        }
        LossKind::UnlikeLiteral => {
            let tokens: BTreeSet<usize> = inputs.unlikely_set().iter().map(|&t| inputs.targets[t]).collect();
            for t in 0..inputs.timesteps() {
                for &c in &tokens {
                    let q = clamp(probs[t][c]);
                    ul += (1.0 - q).ln();
                    for (j, g) in grad[t].iter_mut().enumerate() {
                        let delta = if j == c { 1.0 } else { 0.0 };
                        *g -= alpha * q * (delta - probs[t][j]) / (1.0 - q);
                    }
                }
            }
        }
    }

    let total = match kind {
        LossKind::Mle | LossKind::Mask => mle,
        LossKind::Unlike | LossKind::UnlikeLiteral => mle + alpha * ul,
    };
    (
        LossValue {
            total,
            mle,
            unlikelihood: ul,
        },
        grad,
    )
}

pub fn loss_value(kind: LossKind, inputs: &LossInputs) -> LossValue {
    loss_and_grad(kind, inputs).0
}

pub fn mle_loss(inputs: &LossInputs) -> LossValue {
    loss_value(LossKind::Mle, inputs)
}

pub fn mask_loss(inputs: &LossInputs) -> LossValue {
    loss_value(LossKind::Mask, inputs)
}

pub fn unlike_loss(inputs: &LossInputs) -> LossValue {
    loss_value(LossKind::Unlike, inputs)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradCheckEntry {
    pub timestep: usize,
    pub token: usize,
    pub analytic: f64,
    pub numeric: f64,
    /// `|analytic − numeric| / max(1, |analytic|)`
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub kind: LossKind,
    pub coordinates: usize,
    pub failures: Vec<GradCheckEntry>,
    pub worst: GradCheckEntry,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Compares analytic gradients with central differences
/// `(L(z + h e_i) − L(z − h e_i)) / 2h` at every logit coordinate.
pub fn grad_check(kind: LossKind, inputs: &LossInputs, h: f64, tol: f64) -> Result<GradCheckReport> {
    if !(h > 0.0) {
        return Err(Error::validation(format!("step h={h} must be positive")));
    }
    let (_, analytic) = loss_and_grad(kind, inputs);
    let mut worst: Option<GradCheckEntry> = None;
    let mut failures = Vec::new();
    for t in 0..inputs.timesteps() {
        for v in 0..inputs.vocab() {
            let mut plus = inputs.logits.clone();
            plus[t][v] += h;
            let mut minus = inputs.logits.clone();
            minus[t][v] -= h;
            let lp = loss_value(kind, &inputs.with_logits(plus)?).total;
            let lm = loss_value(kind, &inputs.with_logits(minus)?).total;
            let numeric = (lp - lm) / (2.0 * h);
            let a = analytic[t][v];
            let entry = GradCheckEntry {
                timestep: t,
                token: v,
                analytic: a,
                numeric,
                rel_error: (a - numeric).abs() / a.abs().max(1.0),
            };
            if entry.rel_error > tol {
                failures.push(entry);
            }
            if worst.is_none_or(|w| entry.rel_error > w.rel_error) {
                worst = Some(entry);
            }
        }
    }
    Ok(GradCheckReport {
        kind,
        coordinates: inputs.timesteps() * inputs.vocab(),
        failures,
        worst: worst.expect("at least one coordinate"),
        tolerance: tol,
    })
}
